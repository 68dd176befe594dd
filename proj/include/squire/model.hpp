// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "squire/autograd.hpp"
#include "squire/kg_store.hpp"
#include "squire/path_sampler.hpp"
#include "squire/rng.hpp"

namespace squire {

struct ModelConfig {
  std::size_t layers = 6;
  std::size_t dim = 256;
  std::size_t ff_dim = 512;
  std::size_t heads = 4;
  double dropout = 0.1;
  std::size_t max_seq_len = 9;
  std::size_t vocab_size = 0;
  Activation activation = Activation::kGelu;

  /// Every violated constraint, empty when the config is usable.
  std::vector<std::string> validate(std::size_t max_hops = 3) const;
};

/// Additive [seq_len, seq_len] mask: i sees j iff j < query_len or j <= i.
template <typename T>
Tensor<T> visibility_mask(std::size_t seq_len, std::size_t query_len = 2);

/// Token sequences right-padded into one [batch, seq_len] block.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> tokens;
  std::vector<std::size_t> lengths;
};

TokenBatch make_batch(std::span<const std::vector<TokenId>> sequences, TokenId pad);

/// Teacher-forcing sample: the model reads [head, relation, input...] and is
/// scored against `target` at every position whose `excluded` flag is false.
struct SequenceExample {
  TokenId head = 0;
  TokenId relation = 0;
  std::vector<TokenId> target;
  std::vector<TokenId> input;
  std::vector<char> excluded;
};

SequenceExample make_example(const QueryPathPair& pair);
SequenceExample make_example(const QueryPathPair& pair, const MaskedPath& masked);

/// Masked Transformer encoder over [h, r, path prefix] with a tied token
/// embedding used both for lookup and for the output projection.
template <typename T>
class SquireModel {
 public:
  struct Layer {
    Parameter<T> attn_norm_gain, attn_norm_bias;
    Parameter<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter<T> ff_norm_gain, ff_norm_bias;
    Parameter<T> w1, b1, w2, b2;
  };

  SquireModel(const ModelConfig& config, std::uint64_t seed);
  SquireModel(const SquireModel&) = delete;
  SquireModel& operator=(const SquireModel&) = delete;

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  Parameter<T>& embedding() { return embedding_; }
  const Parameter<T>& embedding() const { return embedding_; }
  void zero_grad();

  /// Final-norm hidden states for every position, [batch*seq_len, dim].
  /// `attention`, when given, receives one [batch, heads, L, L] tensor per layer.
  Var encode(Tape<T>& tape, const TokenBatch& batch, bool train, Rng* rng,
             std::vector<Tensor<T>>* attention = nullptr);
  /// MLP(hidden) * E^T for the given hidden rows, [rows, vocab].
  Var logits(Tape<T>& tape, Var hidden);

 private:
  ModelConfig config_;
  Parameter<T> embedding_;
  Parameter<T> position_;
  std::vector<Layer> layers_;
  Parameter<T> final_norm_gain_, final_norm_bias_;
  Parameter<T> mlp_w_, mlp_b_;
};

/// Mean over examples of the label-smoothed loss, each normalized by its path
/// length |tau| (excluded positions still count in |tau|).
template <typename T>
Var sequence_loss(Tape<T>& tape, SquireModel<T>& model, std::span<const SequenceExample> examples,
                  T smoothing, bool train, Rng* rng);

/// Loss of a single example in inference mode.
template <typename T>
T sequence_loss_value(SquireModel<T>& model, const SequenceExample& example, T smoothing);

/// p(. | h, r, prefix) over the whole vocabulary.
template <typename T>
std::vector<T> next_token_distribution(const SquireModel<T>& model, TokenId head, TokenId relation,
                                       std::span<const TokenId> prefix);

/// Logits at the last position of each sequence (sequences start with h, r).
template <typename T>
Tensor<T> final_position_logits(const SquireModel<T>& model,
                                std::span<const std::vector<TokenId>> sequences);

/// Logits at every position of one sequence, [len, vocab].
template <typename T>
Tensor<T> all_position_logits(const SquireModel<T>& model, std::span<const TokenId> sequence);

/// Per layer, [heads, L, L] attention weights for [h, r, prefix...].
template <typename T>
std::vector<Tensor<T>> export_attention(const SquireModel<T>& model, TokenId head, TokenId relation,
                                        std::span<const TokenId> prefix);

/// Flat binary checkpoint: magic, version, V, d, layer count, then named blocks.
template <typename T>
void save_checkpoint(const SquireModel<T>& model, const std::filesystem::path& path);
template <typename T>
void load_checkpoint(SquireModel<T>& model, const std::filesystem::path& path);

/// Header fields of a checkpoint without loading parameter values.
struct CheckpointHeader {
  std::uint32_t version = 0;
  std::uint32_t vocab_size = 0;
  std::uint32_t dim = 0;
  std::uint32_t layers = 0;
};
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

extern template class SquireModel<float>;
extern template class SquireModel<double>;

}  // namespace squire
