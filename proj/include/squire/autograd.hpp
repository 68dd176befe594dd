// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "squire/tensor.hpp"

namespace squire {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

/// Additive-mask entry for hidden positions. Anything below kHiddenThreshold
/// counts as hidden.
template <typename T>
constexpr T kHidden = -std::numeric_limits<T>::infinity();
template <typename T>
constexpr T kHiddenThreshold = T(-1e9);

template <typename T>
bool is_hidden(T mask_value) {
  return !(mask_value > kHiddenThreshold<T>);
}

/// Row-wise softmax of scores + mask. Rows with no visible entry become all zero.
template <typename T>
void masked_softmax_rows(std::span<const T> scores, std::span<const T> mask, std::size_t cols,
                         std::span<T> out);

enum class Activation { kRelu, kGelu };

/// Reverse-mode gradient tape. Every op records its output and a closure that
/// propagates the output gradient to its inputs; backward() replays them in
/// reverse. Parameter gradients are accumulated (summed) into Parameter::grad.
template <typename T>
class Tape {
 public:
  using Rng = std::mt19937_64;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Inference mode: no backward closures are recorded.
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }
  /// When on, every op output is scanned for NaN/Inf.
  void set_check_finite(bool enabled) { check_finite_ = enabled; }

  Var constant(Tensor<T> value);
  Var variable(Tensor<T> value);
  Var param(Parameter<T>& p);

  const Tensor<T>& value(Var v) const;
  /// Gradient of a node after backward(); for parameters this is Parameter::grad.
  const Tensor<T>& grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  Var add(Var a, Var b);
  Var add_row(Var a, Var bias);
  Var mul(Var a, Var b);
  Var scale(Var a, T s);
  Var sum(Var a);
  /// a[n,k] x b[k,m], or a[n,k] x b[m,k]^T when transpose_b.
  Var matmul(Var a, Var b, bool transpose_b = false);
  Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }
  Var embedding(Var table, std::span<const std::int32_t> ids);
  Var gather_rows(Var a, std::span<const std::size_t> rows);
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5));
  Var activation(Var x, Activation kind);
  Var relu(Var x) { return activation(x, Activation::kRelu); }
  Var gelu(Var x) { return activation(x, Activation::kGelu); }
  Var dropout(Var x, T rate, Rng& rng, bool train);
  Var masked_softmax(Var scores, Var mask);

  /// Multi-head scaled dot-product attention over `batch` sequences of length
  /// `seq_len`. q/k/v are [batch*seq_len, d]; mask is [batch*seq_len, seq_len]
  /// additive. When `probs_out` is set the per-head attention weights are
  /// copied there as [batch, heads, seq_len, seq_len].
  Var attention(Var q, Var k, Var v, Var mask, std::size_t batch, std::size_t seq_len,
                std::size_t heads, Tensor<T>* probs_out = nullptr);

  /// Sum over rows of weight[row] * -sum_i alpha_i log softmax(logits[row])_i,
  /// with alpha = smoothing on the target and (1-smoothing)/(V-1) elsewhere.
  /// Rows with a negative target are skipped.
  Var smoothed_cross_entropy(Var logits, std::span<const std::int32_t> targets,
                             std::span<const T> weights, T smoothing);

  void backward(Var loss);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    std::function<void(Tape&, std::size_t)> backward;
  };

  Var push(Tensor<T> value, bool requires_grad, std::function<void(Tape&, std::size_t)> fn);
  Tensor<T>& grad_ref(std::size_t id);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  void check(Var v, const char* op) const;

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
#ifdef NDEBUG
  bool check_finite_ = false;
#else
  bool check_finite_ = true;
#endif
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace squire
