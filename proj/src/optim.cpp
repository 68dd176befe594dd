// SPDX-License-Identifier: Apache-2.0

#include "squire/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace squire {

template <typename T>
void adam_step(std::span<Parameter<T>* const> params, double lr, const AdamOptions& options) {
  for (Parameter<T>* p : params) {
    p->step += 1;
    const double correction1 = 1.0 - std::pow(options.beta1, static_cast<double>(p->step));
    const double correction2 = 1.0 - std::pow(options.beta2, static_cast<double>(p->step));
    const double step_size = lr / correction1;
    const double sqrt_c2 = std::sqrt(correction2);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      const double m = options.beta1 * p->first_moment[i] + (1.0 - options.beta1) * g;
      const double v = options.beta2 * p->second_moment[i] + (1.0 - options.beta2) * g * g;
      p->first_moment[i] = static_cast<T>(m);
      p->second_moment[i] = static_cast<T>(v);
      p->value[i] -= static_cast<T>(step_size * m / (std::sqrt(v) / sqrt_c2 + options.eps));
    }
    p->zero_grad();
  }
}

template void adam_step<float>(std::span<Parameter<float>* const>, double, const AdamOptions&);
template void adam_step<double>(std::span<Parameter<double>* const>, double, const AdamOptions&);

double lr_at(long step, long total_steps, double warmup_ratio, double peak) {
  if (total_steps <= 0) throw std::invalid_argument("lr_at: total_steps must be positive");
  if (!(warmup_ratio > 0.0 && warmup_ratio < 1.0)) {
    throw std::invalid_argument("lr_at: warmup ratio must lie in (0, 1)");
  }
  step = std::clamp(step, 0L, total_steps);
  const long warmup = std::max(1L, static_cast<long>(std::ceil(warmup_ratio * static_cast<double>(total_steps))));
  if (step <= warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (warmup >= total_steps) return peak;
  return peak * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

}  // namespace squire
