// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "squire/autograd.hpp"

namespace squire::testing {

/// ||a - n|| / max(||a||, ||n||, floor) in the Euclidean norm. The floor turns
/// the check into an absolute one for blocks whose true gradient vanishes, such
/// as the attention key bias, where both sides are pure rounding noise.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                             double floor = 1e-3) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

/// Central differences of `loss` with respect to every entry of `values`.
inline std::vector<double> central_differences(std::vector<double>& values, const std::function<double()>& loss,
                                               double h = 1e-4) {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss();
    values[i] = saved - h;
    const double down = loss();
    values[i] = saved;
    out[i] = (up - down) / (2 * h);
  }
  return out;
}

using OpBuilder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

/// Builds op(inputs), contracts the output with fixed pseudo-random weights and
/// returns, per input, the relative error between backward() and finite differences.
inline std::vector<double> op_gradient_errors(std::vector<Tensor<double>> inputs, const OpBuilder& op,
                                              double h = 1e-4) {
  Tensor<double> weights;
  const auto run = [&](bool grad, std::vector<std::vector<double>>* grads) {
    Tape<double> tape;
    tape.set_grad_enabled(grad);
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(grad ? tape.variable(t) : tape.constant(t));
    const Var out = op(tape, vars);
    if (weights.size() != tape.value(out).size()) {
      weights = Tensor<double>(tape.value(out).shape());
      for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = std::sin(1.7 * static_cast<double>(i) + 0.3);
    }
    const Var loss = tape.sum(tape.mul(out, tape.constant(weights)));
    if (grads) {
      tape.backward(loss);
      for (const Var v : vars) {
        const auto& g = tape.grad(v);
        grads->emplace_back(g.values().begin(), g.values().end());
        grads->back().resize(tape.value(v).size(), 0.0);
      }
    }
    return tape.value(loss)[0];
  };
  std::vector<std::vector<double>> analytic;
  run(true, &analytic);
  std::vector<double> errors;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> values(inputs[k].values().begin(), inputs[k].values().end());
    const auto numeric = central_differences(
        values,
        [&] {
          std::copy(values.begin(), values.end(), inputs[k].values().begin());
          return run(false, nullptr);
        },
        h);
    std::copy(values.begin(), values.end(), inputs[k].values().begin());
    errors.push_back(relative_error(analytic[k], numeric));
  }
  return errors;
}

/// Per parameter block, the relative error between the accumulated gradient of
/// `loss` and central finite differences of it.
template <typename Params>
std::map<std::string, double> parameter_gradient_errors(Params params,
                                                        const std::function<Var(Tape<double>&)>& loss,
                                                        double h = 1e-4) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  const auto value = [&] {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    return tape.value(loss(tape))[0];
  };
  std::map<std::string, double> errors;
  for (auto* p : params) {
    const std::vector<double> analytic(p->grad.values().begin(), p->grad.values().end());
    std::vector<double> values(p->value.values().begin(), p->value.values().end());
    const auto numeric = central_differences(
        values,
        [&] {
          std::copy(values.begin(), values.end(), p->value.values().begin());
          return value();
        },
        h);
    std::copy(values.begin(), values.end(), p->value.values().begin());
    errors[p->name] = relative_error(analytic, numeric);
  }
  for (auto* p : params) p->zero_grad();
  return errors;
}

}  // namespace squire::testing
