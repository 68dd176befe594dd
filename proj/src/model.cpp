// SPDX-License-Identifier: Apache-2.0

#include "squire/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace squire {

std::vector<std::string> ModelConfig::validate(std::size_t max_hops) const {
  std::vector<std::string> errors;
  if (layers == 0) errors.emplace_back("layers must be at least 1");
  if (dim == 0) errors.emplace_back("dim must be positive");
  if (ff_dim == 0) errors.emplace_back("ff_dim must be positive");
  if (heads == 0 || (dim % std::max<std::size_t>(heads, 1)) != 0) {
    errors.emplace_back("dim (" + std::to_string(dim) + ") must be divisible by heads (" +
                        std::to_string(heads) + ")");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) errors.emplace_back("dropout must lie in [0, 1)");
  if (max_seq_len < 2 + 2 * max_hops + 1) {
    errors.emplace_back("max_seq_len must be at least " + std::to_string(2 + 2 * max_hops + 1));
  }
  if (vocab_size < 2) errors.emplace_back("vocab_size must be at least 2");
  return errors;
}

template <typename T>
Tensor<T> visibility_mask(std::size_t seq_len, std::size_t query_len) {
  Tensor<T> mask(Shape{seq_len, seq_len});
  for (std::size_t i = 0; i < seq_len; ++i) {
    for (std::size_t j = 0; j < seq_len; ++j) {
      mask.at(i, j) = (j < query_len || j <= i) ? T(0) : kHidden<T>;
    }
  }
  return mask;
}

template Tensor<float> visibility_mask<float>(std::size_t, std::size_t);
template Tensor<double> visibility_mask<double>(std::size_t, std::size_t);

TokenBatch make_batch(std::span<const std::vector<TokenId>> sequences, TokenId pad) {
  TokenBatch batch;
  batch.batch = sequences.size();
  for (const auto& s : sequences) batch.seq_len = std::max(batch.seq_len, s.size());
  batch.tokens.assign(batch.batch * batch.seq_len, pad);
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    std::copy(sequences[b].begin(), sequences[b].end(), batch.tokens.begin() + b * batch.seq_len);
    batch.lengths.push_back(sequences[b].size());
  }
  return batch;
}

SequenceExample make_example(const QueryPathPair& pair) {
  return {pair.head, pair.relation, pair.path, pair.path, std::vector<char>(pair.path.size(), 0)};
}

SequenceExample make_example(const QueryPathPair& pair, const MaskedPath& masked) {
  SequenceExample ex{pair.head, pair.relation, pair.path, masked.tokens, {}};
  ex.excluded.assign(masked.excluded.begin(), masked.excluded.end());
  return ex;
}

namespace {

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Parameter<T> make_param(const std::string& name, Tensor<T> value) {
  return Parameter<T>(name, std::move(value));
}

/// Padded-batch mask: row i of sequence b sees column j iff j < len_b and
/// (j < 2 or j <= i).
template <typename T>
Tensor<T> batch_mask(const TokenBatch& batch) {
  const std::size_t L = batch.seq_len;
  Tensor<T> mask(Shape{batch.batch * L, L}, kHidden<T>);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const std::size_t len = batch.lengths[b];
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = 0; j < len; ++j) {
        if (j < 2 || j <= i) mask.at(b * L + i, j) = T(0);
      }
    }
  }
  return mask;
}

template <typename T>
SquireModel<T>& mutable_model(const SquireModel<T>& model) {
  // Inference tapes have gradients disabled and never write to parameters.
  return const_cast<SquireModel<T>&>(model);
}

}  // namespace

template <typename T>
SquireModel<T>::SquireModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  if (auto errors = config.validate(0); !errors.empty()) {
    throw std::invalid_argument("model config: " + errors.front());
  }
  Rng rng = derive_rng(seed, 0x5EED);
  const std::size_t d = config.dim;
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double proj_std = embed_std / std::sqrt(2.0 * static_cast<double>(config.layers));
  const double ff_std = 1.0 / std::sqrt(static_cast<double>(config.ff_dim)) /
                        std::sqrt(2.0 * static_cast<double>(config.layers));
  embedding_ = make_param("embedding", normal_tensor<T>({config.vocab_size, d}, embed_std, rng));
  position_ = make_param("position", normal_tensor<T>({config.max_seq_len, d}, embed_std, rng));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Layer layer;
    layer.attn_norm_gain = make_param(p + "attn_norm.gain", Tensor<T>({d}, T(1)));
    layer.attn_norm_bias = make_param(p + "attn_norm.bias", Tensor<T>({d}));
    layer.wq = make_param(p + "attn.wq", normal_tensor<T>({d, d}, embed_std, rng));
    layer.bq = make_param(p + "attn.bq", Tensor<T>({d}));
    layer.wk = make_param(p + "attn.wk", normal_tensor<T>({d, d}, embed_std, rng));
    layer.bk = make_param(p + "attn.bk", Tensor<T>({d}));
    layer.wv = make_param(p + "attn.wv", normal_tensor<T>({d, d}, embed_std, rng));
    layer.bv = make_param(p + "attn.bv", Tensor<T>({d}));
    layer.wo = make_param(p + "attn.wo", normal_tensor<T>({d, d}, proj_std, rng));
    layer.bo = make_param(p + "attn.bo", Tensor<T>({d}));
    layer.ff_norm_gain = make_param(p + "ff_norm.gain", Tensor<T>({d}, T(1)));
    layer.ff_norm_bias = make_param(p + "ff_norm.bias", Tensor<T>({d}));
    layer.w1 = make_param(p + "ff.w1", normal_tensor<T>({d, config.ff_dim}, embed_std, rng));
    layer.b1 = make_param(p + "ff.b1", Tensor<T>({config.ff_dim}));
    layer.w2 = make_param(p + "ff.w2", normal_tensor<T>({config.ff_dim, d}, ff_std, rng));
    layer.b2 = make_param(p + "ff.b2", Tensor<T>({d}));
    layers_.push_back(std::move(layer));
  }
  final_norm_gain_ = make_param("final_norm.gain", Tensor<T>({d}, T(1)));
  final_norm_bias_ = make_param("final_norm.bias", Tensor<T>({d}));
  mlp_w_ = make_param("mlp.w", normal_tensor<T>({d, d}, embed_std, rng));
  mlp_b_ = make_param("mlp.b", Tensor<T>({d}));
}

template <typename T>
std::vector<Parameter<T>*> SquireModel<T>::parameters() {
  std::vector<Parameter<T>*> out{&embedding_, &position_};
  for (auto& l : layers_) {
    for (Parameter<T>* p : {&l.attn_norm_gain, &l.attn_norm_bias, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv,
                            &l.bv, &l.wo, &l.bo, &l.ff_norm_gain, &l.ff_norm_bias, &l.w1, &l.b1,
                            &l.w2, &l.b2}) {
      out.push_back(p);
    }
  }
  for (Parameter<T>* p : {&final_norm_gain_, &final_norm_bias_, &mlp_w_, &mlp_b_}) out.push_back(p);
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> SquireModel<T>::parameters() const {
  auto mutable_params = mutable_model(*this).parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

template <typename T>
void SquireModel<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
Var SquireModel<T>::encode(Tape<T>& tape, const TokenBatch& batch, bool train, Rng* rng,
                           std::vector<Tensor<T>>* attention) {
  if (batch.seq_len > config_.max_seq_len) {
    throw std::invalid_argument("sequence length " + std::to_string(batch.seq_len) +
                                " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  if (batch.seq_len < 2) throw std::invalid_argument("sequence must contain the query (h, r)");
  const bool use_dropout = train && config_.dropout > 0.0;
  if (use_dropout && rng == nullptr) throw std::invalid_argument("training mode needs an rng");
  const T rate = static_cast<T>(config_.dropout);
  const auto drop = [&](Var v) { return use_dropout ? tape.dropout(v, rate, *rng, true) : v; };

  std::vector<std::int32_t> positions(batch.tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    positions[i] = static_cast<std::int32_t>(i % batch.seq_len);
  }
  Var x = tape.add(tape.embedding(tape.param(embedding_), batch.tokens),
                   tape.embedding(tape.param(position_), positions));
  x = drop(x);
  const Var mask = tape.constant(batch_mask<T>(batch));
  if (attention) attention->clear();
  for (auto& l : layers_) {
    Var h = tape.layer_norm(x, tape.param(l.attn_norm_gain), tape.param(l.attn_norm_bias));
    Var q = tape.linear(h, tape.param(l.wq), tape.param(l.bq));
    Var k = tape.linear(h, tape.param(l.wk), tape.param(l.bk));
    Var v = tape.linear(h, tape.param(l.wv), tape.param(l.bv));
    Tensor<T> probs;
    Var a = tape.attention(q, k, v, mask, batch.batch, batch.seq_len, config_.heads,
                           attention ? &probs : nullptr);
    if (attention) attention->push_back(std::move(probs));
    x = tape.add(x, drop(tape.linear(a, tape.param(l.wo), tape.param(l.bo))));
    h = tape.layer_norm(x, tape.param(l.ff_norm_gain), tape.param(l.ff_norm_bias));
    Var f = tape.activation(tape.linear(h, tape.param(l.w1), tape.param(l.b1)), config_.activation);
    x = tape.add(x, drop(tape.linear(f, tape.param(l.w2), tape.param(l.b2))));
  }
  return tape.layer_norm(x, tape.param(final_norm_gain_), tape.param(final_norm_bias_));
}

template <typename T>
Var SquireModel<T>::logits(Tape<T>& tape, Var hidden) {
  Var m = tape.activation(tape.linear(hidden, tape.param(mlp_w_), tape.param(mlp_b_)), config_.activation);
  return tape.matmul(m, tape.param(embedding_), /*transpose_b=*/true);
}

template <typename T>
Var sequence_loss(Tape<T>& tape, SquireModel<T>& model, std::span<const SequenceExample> examples,
                  T smoothing, bool train, Rng* rng) {
  if (examples.empty()) return tape.constant(Tensor<T>::scalar(T(0)));
  std::vector<std::vector<TokenId>> sequences;
  sequences.reserve(examples.size());
  for (const auto& ex : examples) {
    if (ex.target.empty() || ex.input.size() != ex.target.size() || ex.excluded.size() != ex.target.size()) {
      throw std::invalid_argument("sequence_loss: malformed example");
    }
    std::vector<TokenId> seq{ex.head, ex.relation};
    seq.insert(seq.end(), ex.input.begin(), ex.input.end() - 1);
    sequences.push_back(std::move(seq));
  }
  const TokenId pad = static_cast<TokenId>(model.config().vocab_size - 3);  // <bos>, never scored
  const TokenBatch batch = make_batch(sequences, pad);
  std::vector<std::size_t> rows;
  std::vector<std::int32_t> targets;
  std::vector<T> weights;
  const T batch_scale = T(1) / static_cast<T>(examples.size());
  for (std::size_t b = 0; b < examples.size(); ++b) {
    const auto& ex = examples[b];
    const T w = batch_scale / static_cast<T>(ex.target.size());
    for (std::size_t k = 0; k < ex.target.size(); ++k) {
      if (ex.excluded[k]) continue;
      rows.push_back(b * batch.seq_len + 1 + k);
      targets.push_back(ex.target[k]);
      weights.push_back(w);
    }
  }
  if (rows.empty()) return tape.constant(Tensor<T>::scalar(T(0)));
  Var hidden = model.encode(tape, batch, train, rng);
  Var logits = model.logits(tape, tape.gather_rows(hidden, rows));
  return tape.smoothed_cross_entropy(logits, targets, weights, smoothing);
}

template <typename T>
T sequence_loss_value(SquireModel<T>& model, const SequenceExample& example, T smoothing) {
  Tape<T> tape;
  tape.set_grad_enabled(false);
  Var loss = sequence_loss<T>(tape, model, std::span(&example, 1), smoothing, false, nullptr);
  return tape.value(loss)[0];
}

template <typename T>
Tensor<T> final_position_logits(const SquireModel<T>& model,
                                std::span<const std::vector<TokenId>> sequences) {
  auto& m = mutable_model(model);
  Tape<T> tape;
  tape.set_grad_enabled(false);
  const TokenId pad = static_cast<TokenId>(model.config().vocab_size - 3);
  const TokenBatch batch = make_batch(sequences, pad);
  Var hidden = m.encode(tape, batch, false, nullptr);
  std::vector<std::size_t> rows;
  rows.reserve(sequences.size());
  for (std::size_t b = 0; b < sequences.size(); ++b) rows.push_back(b * batch.seq_len + batch.lengths[b] - 1);
  Var logits = m.logits(tape, tape.gather_rows(hidden, rows));
  return tape.value(logits);
}

template <typename T>
Tensor<T> all_position_logits(const SquireModel<T>& model, std::span<const TokenId> sequence) {
  auto& m = mutable_model(model);
  Tape<T> tape;
  tape.set_grad_enabled(false);
  const std::vector<std::vector<TokenId>> one{std::vector<TokenId>(sequence.begin(), sequence.end())};
  const TokenBatch batch = make_batch(one, 0);
  Var hidden = m.encode(tape, batch, false, nullptr);
  return tape.value(m.logits(tape, hidden));
}

template <typename T>
std::vector<T> next_token_distribution(const SquireModel<T>& model, TokenId head, TokenId relation,
                                       std::span<const TokenId> prefix) {
  std::vector<TokenId> seq{head, relation};
  seq.insert(seq.end(), prefix.begin(), prefix.end());
  const std::vector<std::vector<TokenId>> one{std::move(seq)};
  const Tensor<T> logits = final_position_logits(model, one);
  std::vector<T> probs(logits.size());
  const std::vector<T> mask(logits.size(), T(0));
  masked_softmax_rows<T>(logits.values(), mask, logits.size(), probs);
  return probs;
}

template <typename T>
std::vector<Tensor<T>> export_attention(const SquireModel<T>& model, TokenId head, TokenId relation,
                                        std::span<const TokenId> prefix) {
  auto& m = mutable_model(model);
  std::vector<TokenId> seq{head, relation};
  seq.insert(seq.end(), prefix.begin(), prefix.end());
  const std::vector<std::vector<TokenId>> one{std::move(seq)};
  const TokenBatch batch = make_batch(one, 0);
  Tape<T> tape;
  tape.set_grad_enabled(false);
  std::vector<Tensor<T>> attention;
  m.encode(tape, batch, false, nullptr, &attention);
  for (auto& a : attention) a.reshape({model.config().heads, batch.seq_len, batch.seq_len});
  return attention;
}

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'R', 'M'};
constexpr std::uint32_t kVersion = 1;

template <typename V>
void write_pod(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw DataError("checkpoint: truncated file");
  return v;
}

CheckpointHeader read_header(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw DataError("checkpoint: bad magic");
  CheckpointHeader h;
  h.version = read_pod<std::uint32_t>(in);
  if (h.version != kVersion) throw DataError("checkpoint: unsupported version " + std::to_string(h.version));
  h.vocab_size = read_pod<std::uint32_t>(in);
  h.dim = read_pod<std::uint32_t>(in);
  h.layers = read_pod<std::uint32_t>(in);
  return h;
}

}  // namespace

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_header(in);
}

template <typename T>
void save_checkpoint(const SquireModel<T>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, 4);
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.config().vocab_size));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.config().dim));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.config().layers));
  const auto params = model.parameters();
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter<T>* p : params) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) write_pod<std::uint64_t>(out, d);
    for (T v : p->value.values()) write_pod<float>(out, static_cast<float>(v));
  }
  if (!out) throw DataError("failed writing " + path.string());
}

template <typename T>
void load_checkpoint(SquireModel<T>& model, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const CheckpointHeader h = read_header(in);
  const auto& cfg = model.config();
  if (h.vocab_size != cfg.vocab_size || h.dim != cfg.dim || h.layers != cfg.layers) {
    throw DataError("checkpoint/config mismatch: checkpoint has V=" + std::to_string(h.vocab_size) +
                    " d=" + std::to_string(h.dim) + " layers=" + std::to_string(h.layers) +
                    ", config has V=" + std::to_string(cfg.vocab_size) + " d=" + std::to_string(cfg.dim) +
                    " layers=" + std::to_string(cfg.layers));
  }
  auto params = model.parameters();
  const auto count = read_pod<std::uint32_t>(in);
  if (count != params.size()) throw DataError("checkpoint: parameter count mismatch");
  for (Parameter<T>* p : params) {
    const auto name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (name != p->name) throw DataError("checkpoint: expected block '" + p->name + "', found '" + name + "'");
    const auto rank = read_pod<std::uint32_t>(in);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(read_pod<std::uint64_t>(in));
    if (shape != p->value.shape()) throw DataError("checkpoint: shape mismatch for '" + name + "'");
    for (T& v : p->value.values()) v = static_cast<T>(read_pod<float>(in));
    p->zero_grad();
    p->reset_optimizer();
  }
}

template class SquireModel<float>;
template class SquireModel<double>;

#define SQUIRE_INSTANTIATE(T)                                                                       \
  template Var sequence_loss<T>(Tape<T>&, SquireModel<T>&, std::span<const SequenceExample>, T, bool, \
                                Rng*);                                                              \
  template T sequence_loss_value<T>(SquireModel<T>&, const SequenceExample&, T);                    \
  template std::vector<T> next_token_distribution<T>(const SquireModel<T>&, TokenId, TokenId,       \
                                                     std::span<const TokenId>);                     \
  template Tensor<T> final_position_logits<T>(const SquireModel<T>&,                                \
                                              std::span<const std::vector<TokenId>>);               \
  template Tensor<T> all_position_logits<T>(const SquireModel<T>&, std::span<const TokenId>);       \
  template std::vector<Tensor<T>> export_attention<T>(const SquireModel<T>&, TokenId, TokenId,      \
                                                      std::span<const TokenId>);                    \
  template void save_checkpoint<T>(const SquireModel<T>&, const std::filesystem::path&);            \
  template void load_checkpoint<T>(SquireModel<T>&, const std::filesystem::path&);

SQUIRE_INSTANTIATE(float)
SQUIRE_INSTANTIATE(double)

#undef SQUIRE_INSTANTIATE

}  // namespace squire
