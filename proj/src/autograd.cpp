// SPDX-License-Identifier: Apache-2.0

#include "squire/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace squire {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

template <typename T>
ConstMap<T> as_matrix(const Tensor<T>& t) {
  return ConstMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
MutMap<T> as_matrix(Tensor<T>& t) {
  return MutMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " +
                   shape_to_string(b));
}

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

}  // namespace

template <typename T>
void masked_softmax_rows(std::span<const T> scores, std::span<const T> mask, std::size_t cols,
                         std::span<T> out) {
  const std::size_t rows = scores.size() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * cols;
    T peak = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (!is_hidden(mask[base + c])) peak = std::max(peak, scores[base + c] + mask[base + c]);
    }
    if (peak == -std::numeric_limits<T>::infinity()) {
      std::fill_n(out.begin() + base, cols, T(0));
      continue;
    }
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const T e = is_hidden(mask[base + c]) ? T(0) : std::exp(scores[base + c] + mask[base + c] - peak);
      out[base + c] = e;
      total += e;
    }
    for (std::size_t c = 0; c < cols; ++c) out[base + c] /= total;
  }
}

template void masked_softmax_rows<float>(std::span<const float>, std::span<const float>, std::size_t,
                                         std::span<float>);
template void masked_softmax_rows<double>(std::span<const double>, std::span<const double>,
                                          std::size_t, std::span<double>);

template <typename T>
Var Tape<T>::push(Tensor<T> value, bool requires_grad, std::function<void(Tape&, std::size_t)> fn) {
  if (check_finite_) {
    for (T x : value.values()) {
      if (!std::isfinite(x)) throw NumericError("non-finite value produced on tape");
    }
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad && grad_enabled_;
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
void Tape<T>::check(Var v, const char* op) const {
  if (!v.valid() || v.id >= nodes_.size()) {
    throw std::invalid_argument(std::string(op) + ": variable is not on this tape");
  }
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  return push(std::move(value), false, nullptr);
}

template <typename T>
Var Tape<T>::variable(Tensor<T> value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::param(Parameter<T>& p) {
  Node node;
  node.param = &p;
  node.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  check(v, "value");
  const Node& n = nodes_[v.id];
  return n.param ? n.param->value : n.value;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var v) const {
  check(v, "grad");
  const Node& n = nodes_[v.id];
  return n.param ? n.param->grad : n.grad;
}

template <typename T>
Tensor<T>& Tape<T>::grad_ref(std::size_t id) {
  Node& n = nodes_[id];
  if (n.param) return n.param->grad;
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
    n.grad = Tensor<T>(n.value.shape());
  }
  return n.grad;
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  check(a, "add");
  check(b, "add");
  const auto& x = value(a);
  const auto& y = value(b);
  if (!x.same_shape(y)) shape_mismatch("add", x.shape(), y.shape());
  Tensor<T> out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, std::size_t self) {
    const Tensor<T>& g = t.nodes_[self].grad;
    for (Var in : {a, b}) {
      if (!t.needs(in)) continue;
      auto& gi = t.grad_ref(in.id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <typename T>
Var Tape<T>::add_row(Var a, Var bias) {
  check(a, "add_row");
  check(bias, "add_row");
  const auto& x = value(a);
  const auto& b = value(bias);
  if (b.size() != x.cols()) shape_mismatch("add_row", x.shape(), b.shape());
  Tensor<T> out = x;
  const std::size_t cols = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += b[c];
  }
  return push(std::move(out), needs(a) || needs(bias), [a, bias, cols](Tape& t, std::size_t self) {
    const auto& g = t.nodes_[self].grad;
    if (t.needs(a)) {
      auto& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs(bias)) {
      auto& gb = t.grad_ref(bias.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += g[i];
    }
  });
}

template <typename T>
Var Tape<T>::mul(Var a, Var b) {
  check(a, "mul");
  check(b, "mul");
  const auto& x = value(a);
  const auto& y = value(b);
  if (!x.same_shape(y)) shape_mismatch("mul", x.shape(), y.shape());
  Tensor<T> out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, std::size_t self) {
    const Tensor<T>& g = t.nodes_[self].grad;
    const Tensor<T>& xa = t.value(a);
    const Tensor<T>& xb = t.value(b);
    if (t.needs(a)) {
      auto& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * xb[i];
    }
    if (t.needs(b)) {
      auto& gb = t.grad_ref(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xa[i];
    }
  });
}

template <typename T>
Var Tape<T>::scale(Var a, T s) {
  check(a, "scale");
  Tensor<T> out = value(a);
  for (auto& v : out.values()) v *= s;
  return push(std::move(out), needs(a), [a, s](Tape& t, std::size_t self) {
    const auto& g = t.nodes_[self].grad;
    auto& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

template <typename T>
Var Tape<T>::sum(Var a) {
  check(a, "sum");
  T total = 0;
  for (T v : value(a).values()) total += v;
  return push(Tensor<T>::scalar(total), needs(a), [a](Tape& t, std::size_t self) {
    const T g = t.nodes_[self].grad[0];
    auto& ga = t.grad_ref(a.id);
    for (auto& v : ga.values()) v += g;
  });
}

template <typename T>
Var Tape<T>::matmul(Var a, Var b, bool transpose_b) {
  check(a, "matmul");
  check(b, "matmul");
  const auto& x = value(a);
  const auto& y = value(b);
  const std::size_t inner = transpose_b ? y.cols() : y.rows();
  if (x.rank() != 2 || y.rank() != 2 || x.cols() != inner) {
    shape_mismatch("matmul", x.shape(), y.shape());
  }
  const std::size_t out_cols = transpose_b ? y.rows() : y.cols();
  Tensor<T> out(Shape{x.rows(), out_cols});
  if (transpose_b) {
    as_matrix(out).noalias() = as_matrix(x) * as_matrix(y).transpose();
  } else {
    as_matrix(out).noalias() = as_matrix(x) * as_matrix(y);
  }
  return push(std::move(out), needs(a) || needs(b), [a, b, transpose_b](Tape& t, std::size_t self) {
    const auto g = as_matrix(std::as_const(t.nodes_[self].grad));
    if (t.needs(a)) {
      auto ga = as_matrix(t.grad_ref(a.id));
      const auto y = as_matrix(t.value(b));
      if (transpose_b) {
        ga.noalias() += g * y;
      } else {
        ga.noalias() += g * y.transpose();
      }
    }
    if (t.needs(b)) {
      auto gb = as_matrix(t.grad_ref(b.id));
      const auto x = as_matrix(t.value(a));
      if (transpose_b) {
        gb.noalias() += g.transpose() * x;
      } else {
        gb.noalias() += x.transpose() * g;
      }
    }
  });
}

template <typename T>
Var Tape<T>::embedding(Var table, std::span<const std::int32_t> ids) {
  check(table, "embedding");
  const auto& e = value(table);
  if (e.rank() != 2) throw ShapeError("embedding: table must be rank 2, got " + shape_to_string(e.shape()));
  const std::size_t width = e.cols();
  Tensor<T> out(Shape{ids.size(), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= e.rows()) {
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " outside table " +
                       shape_to_string(e.shape()));
    }
    std::copy_n(e.row(ids[i]).begin(), width, out.row(i).begin());
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return push(std::move(out), needs(table), [table, saved = std::move(saved), width](Tape& t, std::size_t self) {
    const auto& g = t.nodes_[self].grad;
    auto& ge = t.grad_ref(table.id);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      T* dst = ge.data() + static_cast<std::size_t>(saved[i]) * width;
      const T* src = g.data() + i * width;
      for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
    }
  });
}

template <typename T>
Var Tape<T>::gather_rows(Var a, std::span<const std::size_t> rows) {
  check(a, "gather_rows");
  const auto& x = value(a);
  const std::size_t width = x.cols();
  Tensor<T> out(Shape{rows.size(), width});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(x.row(rows[i]).begin(), width, out.row(i).begin());
  }
  std::vector<std::size_t> saved(rows.begin(), rows.end());
  return push(std::move(out), needs(a), [a, saved = std::move(saved), width](Tape& t, std::size_t self) {
    const auto& g = t.nodes_[self].grad;
    auto& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      for (std::size_t c = 0; c < width; ++c) ga[saved[i] * width + c] += g[i * width + c];
    }
  });
}

template <typename T>
Var Tape<T>::layer_norm(Var x, Var gamma, Var beta, T eps) {
  check(x, "layer_norm");
  const auto& in = value(x);
  const auto& g = value(gamma);
  const auto& b = value(beta);
  const std::size_t cols = in.cols();
  if (g.size() != cols || b.size() != cols) shape_mismatch("layer_norm", in.shape(), g.shape());
  const std::size_t rows = in.rows();
  Tensor<T> out(in.shape());
  Tensor<T> normalized(in.shape());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = in.row(r);
    T mean = 0;
    for (T v : row) mean += v;
    mean /= T(cols);
    T var = 0;
    for (T v : row) var += (v - mean) * (v - mean);
    var /= T(cols);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const T n = (row[c] - mean) * inv_std[r];
      normalized.at(r, c) = n;
      out.at(r, c) = n * g[c] + b[c];
    }
  }
  return push(std::move(out), needs(x) || needs(gamma) || needs(beta),
              [x, gamma, beta, normalized = std::move(normalized), inv_std = std::move(inv_std)](
                  Tape& t, std::size_t self) {
                const Tensor<T>& dy = t.nodes_[self].grad;
                const Tensor<T>& gain = t.value(gamma);
                const std::size_t cols = dy.cols();
                if (t.needs(gamma) || t.needs(beta)) {
                  for (std::size_t r = 0; r < dy.rows(); ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                      if (t.needs(gamma)) t.grad_ref(gamma.id)[c] += dy.at(r, c) * normalized.at(r, c);
                      if (t.needs(beta)) t.grad_ref(beta.id)[c] += dy.at(r, c);
                    }
                  }
                }
                if (!t.needs(x)) return;
                auto& gx = t.grad_ref(x.id);
                std::vector<T> dn(cols);
                for (std::size_t r = 0; r < dy.rows(); ++r) {
                  T mean_dn = 0;
                  T mean_dn_n = 0;
                  for (std::size_t c = 0; c < cols; ++c) {
                    dn[c] = dy.at(r, c) * gain[c];
                    mean_dn += dn[c];
                    mean_dn_n += dn[c] * normalized.at(r, c);
                  }
                  mean_dn /= T(cols);
                  mean_dn_n /= T(cols);
                  for (std::size_t c = 0; c < cols; ++c) {
                    gx[r * cols + c] += inv_std[r] * (dn[c] - mean_dn - normalized.at(r, c) * mean_dn_n);
                  }
                }
              });
}

template <typename T>
Var Tape<T>::activation(Var x, Activation kind) {
  check(x, "activation");
  Tensor<T> out = value(x);
  for (auto& v : out.values()) v = kind == Activation::kRelu ? std::max(v, T(0)) : gelu_value(v);
  return push(std::move(out), needs(x), [x, kind](Tape& t, std::size_t self) {
    const auto& g = t.nodes_[self].grad;
    const Tensor<T>& in = t.value(x);
    auto& gx = t.grad_ref(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T d = kind == Activation::kRelu ? (in[i] > 0 ? T(1) : T(0)) : gelu_derivative(in[i]);
      gx[i] += g[i] * d;
    }
  });
}

template <typename T>
Var Tape<T>::dropout(Var x, T rate, Rng& rng, bool train) {
  check(x, "dropout");
  if (!train || rate <= T(0)) return x;
  if (rate >= T(1)) throw std::invalid_argument("dropout: rate must be below 1");
  const auto& in = value(x);
  Tensor<T> keep(in.shape());
  // Each 64-bit draw yields two 32-bit uniforms compared against the drop rate.
  const auto threshold = static_cast<std::uint64_t>(static_cast<double>(rate) * 4294967296.0);
  const T scale_kept = T(1) / (T(1) - rate);
  Tensor<T> out = in;
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i % 2 == 0) bits = rng();
    const std::uint64_t u = (i % 2 == 0) ? (bits & 0xFFFFFFFFULL) : (bits >> 32);
    keep[i] = u >= threshold ? scale_kept : T(0);
    out[i] *= keep[i];
  }
  return push(std::move(out), needs(x), [x, keep = std::move(keep)](Tape& t, std::size_t self) {
    const auto& g = t.nodes_[self].grad;
    auto& gx = t.grad_ref(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * keep[i];
  });
}

template <typename T>
Var Tape<T>::masked_softmax(Var scores, Var mask) {
  check(scores, "masked_softmax");
  check(mask, "masked_softmax");
  const auto& s = value(scores);
  const auto& m = value(mask);
  if (!s.same_shape(m)) shape_mismatch("masked_softmax", s.shape(), m.shape());
  Tensor<T> out(s.shape());
  masked_softmax_rows<T>(s.values(), m.values(), s.cols(), out.values());
  return push(std::move(out), needs(scores), [scores](Tape& t, std::size_t self) {
    const auto& g = t.nodes_[self].grad;
    const auto& p = t.nodes_[self].value;
    auto& gs = t.grad_ref(scores.id);
    const std::size_t cols = p.cols();
    for (std::size_t r = 0; r < p.rows(); ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += g.at(r, c) * p.at(r, c);
      for (std::size_t c = 0; c < cols; ++c) gs[r * cols + c] += p.at(r, c) * (g.at(r, c) - dot);
    }
  });
}

template <typename T>
Var Tape<T>::attention(Var q, Var k, Var v, Var mask, std::size_t batch, std::size_t seq_len,
                       std::size_t heads, Tensor<T>* probs_out) {
  check(q, "attention");
  check(k, "attention");
  check(v, "attention");
  check(mask, "attention");
  const auto& qv = value(q);
  const auto& kv = value(k);
  const auto& vv = value(v);
  const auto& mv = value(mask);
  const std::size_t width = qv.cols();
  if (!qv.same_shape(kv) || !qv.same_shape(vv) || qv.rows() != batch * seq_len) {
    shape_mismatch("attention", qv.shape(), kv.shape());
  }
  if (mv.rows() != batch * seq_len || mv.cols() != seq_len) {
    shape_mismatch("attention", qv.shape(), mv.shape());
  }
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(width) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t head_dim = width / heads;
  const T inv_scale = T(1) / std::sqrt(T(head_dim));
  Tensor<T> probs(Shape{batch, heads, seq_len, seq_len});
  Tensor<T> out(qv.shape());
  std::vector<T> scores(seq_len * seq_len);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * seq_len;
    std::span<const T> mask_block = mv.values().subspan(base * seq_len, seq_len * seq_len);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * head_dim;
      for (std::size_t i = 0; i < seq_len; ++i) {
        for (std::size_t j = 0; j < seq_len; ++j) {
          if (is_hidden(mask_block[i * seq_len + j])) {
            scores[i * seq_len + j] = T(0);
            continue;
          }
          T dot = 0;
          const T* qi = qv.data() + (base + i) * width + off;
          const T* kj = kv.data() + (base + j) * width + off;
          for (std::size_t c = 0; c < head_dim; ++c) dot += qi[c] * kj[c];
          scores[i * seq_len + j] = dot * inv_scale;
        }
      }
      std::span<T> p = probs.values().subspan(((b * heads) + h) * seq_len * seq_len, seq_len * seq_len);
      masked_softmax_rows<T>(scores, mask_block, seq_len, p);
      for (std::size_t i = 0; i < seq_len; ++i) {
        T* oi = out.data() + (base + i) * width + off;
        for (std::size_t j = 0; j < seq_len; ++j) {
          const T w = p[i * seq_len + j];
          if (w == T(0)) continue;
          const T* vj = vv.data() + (base + j) * width + off;
          for (std::size_t c = 0; c < head_dim; ++c) oi[c] += w * vj[c];
        }
      }
    }
  }
  if (probs_out) *probs_out = probs;
  return push(
      std::move(out), needs(q) || needs(k) || needs(v),
      [q, k, v, batch, seq_len, heads, head_dim, inv_scale, probs = std::move(probs)](Tape& t,
                                                                                     std::size_t self) {
        const Tensor<T>& dout = t.nodes_[self].grad;
        const Tensor<T>& qv = t.value(q);
        const Tensor<T>& kv = t.value(k);
        const Tensor<T>& vv = t.value(v);
        const std::size_t width = qv.cols();
        Tensor<T> dq(qv.shape()), dk(qv.shape()), dv(qv.shape());
        std::vector<T> dp(seq_len * seq_len);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = b * seq_len;
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * head_dim;
            std::span<const T> p =
                probs.values().subspan(((b * heads) + h) * seq_len * seq_len, seq_len * seq_len);
            for (std::size_t i = 0; i < seq_len; ++i) {
              const T* go = dout.data() + (base + i) * width + off;
              for (std::size_t j = 0; j < seq_len; ++j) {
                const T w = p[i * seq_len + j];
                const T* vj = vv.data() + (base + j) * width + off;
                T* dvj = dv.data() + (base + j) * width + off;
                T dot = 0;
                for (std::size_t c = 0; c < head_dim; ++c) {
                  dot += go[c] * vj[c];
                  dvj[c] += w * go[c];
                }
                dp[i * seq_len + j] = dot;
              }
              T row_dot = 0;
              for (std::size_t j = 0; j < seq_len; ++j) row_dot += dp[i * seq_len + j] * p[i * seq_len + j];
              const T* qi = qv.data() + (base + i) * width + off;
              T* dqi = dq.data() + (base + i) * width + off;
              for (std::size_t j = 0; j < seq_len; ++j) {
                const T ds = p[i * seq_len + j] * (dp[i * seq_len + j] - row_dot) * inv_scale;
                if (ds == T(0)) continue;
                const T* kj = kv.data() + (base + j) * width + off;
                T* dkj = dk.data() + (base + j) * width + off;
                for (std::size_t c = 0; c < head_dim; ++c) {
                  dqi[c] += ds * kj[c];
                  dkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
        const std::pair<Var, const Tensor<T>*> parts[] = {{q, &dq}, {k, &dk}, {v, &dv}};
        for (const auto& [in, d] : parts) {
          if (!t.needs(in)) continue;
          auto& g = t.grad_ref(in.id);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*d)[i];
        }
      });
}

template <typename T>
Var Tape<T>::smoothed_cross_entropy(Var logits, std::span<const std::int32_t> targets,
                                    std::span<const T> weights, T smoothing) {
  check(logits, "smoothed_cross_entropy");
  const auto& z = value(logits);
  const std::size_t rows = z.rows();
  const std::size_t vocab = z.cols();
  if (targets.size() != rows || weights.size() != rows) {
    throw ShapeError("smoothed_cross_entropy: " + std::to_string(rows) + " logit rows but " +
                     std::to_string(targets.size()) + " targets / " + std::to_string(weights.size()) +
                     " weights");
  }
  if (vocab < 2) throw ShapeError("smoothed_cross_entropy: vocabulary must have at least 2 tokens");
  const T other = (T(1) - smoothing) / T(vocab - 1);
  Tensor<T> probs(z.shape());
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0) continue;
    const auto row = z.row(r);
    const T peak = *std::max_element(row.begin(), row.end());
    T denom = 0;
    for (T v : row) denom += std::exp(v - peak);
    const T log_denom = std::log(denom) + peak;
    T row_loss = 0;
    for (std::size_t c = 0; c < vocab; ++c) {
      const T logp = row[c] - log_denom;
      probs.at(r, c) = std::exp(logp);
      row_loss -= (static_cast<std::int32_t>(c) == targets[r] ? smoothing : other) * logp;
    }
    total += weights[r] * row_loss;
  }
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  std::vector<T> w(weights.begin(), weights.end());
  return push(Tensor<T>::scalar(total), needs(logits),
              [logits, probs = std::move(probs), tgt = std::move(tgt), w = std::move(w), smoothing,
               other](Tape& t, std::size_t self) {
                const T g = t.nodes_[self].grad[0];
                auto& gz = t.grad_ref(logits.id);
                const std::size_t vocab = probs.cols();
                for (std::size_t r = 0; r < tgt.size(); ++r) {
                  if (tgt[r] < 0) continue;
                  const T scale = g * w[r];
                  for (std::size_t c = 0; c < vocab; ++c) {
                    const T alpha = static_cast<std::int32_t>(c) == tgt[r] ? smoothing : other;
                    gz[r * vocab + c] += scale * (probs.at(r, c) - alpha);
                  }
                }
              });
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (nodes_.empty()) throw std::logic_error("backward: nothing has been recorded on the tape");
  check(loss, "backward");
  if (value(loss).size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_to_string(value(loss).shape()));
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_ref(loss.id)[0] += T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward) continue;
    if (n.grad.size() == 0) continue;  // no gradient reached this node
    n.backward(*this, i);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace squire
