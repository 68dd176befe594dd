// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

#include "squire/tensor.hpp"

namespace squire {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update on every parameter, then zeroes the gradients.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, double lr, const AdamOptions& options = {});

/// Linear warmup from 0 to `peak` over the first ceil(warmup_ratio * total_steps)
/// steps, then linear decay to 0 at `total_steps`.
double lr_at(long step, long total_steps, double warmup_ratio, double peak);

}  // namespace squire
