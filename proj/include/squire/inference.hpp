// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "squire/kg_store.hpp"
#include "squire/model.hpp"

namespace squire {

struct Query {
  TokenId head = 0;
  TokenId relation = 0;
  friend bool operator==(const Query&, const Query&) = default;
};

/// A generated path (r1, e1, ..., rn, en, <eos>) or, for prefix search, an
/// unfinished (r1, e1, ..., rk, ek).
struct Hypothesis {
  std::vector<TokenId> tokens;
  double sum_logprob = 0.0;
  bool finished = false;

  /// Length-normalized log-likelihood; the length counts <eos>.
  double score() const {
    return tokens.empty() ? sum_logprob : sum_logprob / static_cast<double>(tokens.size());
  }
  /// The entity the path ends at (the token before <eos> when finished).
  TokenId terminal_entity() const {
    return tokens.at(tokens.size() - (finished ? 2 : 1));
  }
  std::size_t hops() const { return tokens.size() / 2; }
};

struct BeamOptions {
  std::size_t beam_size = 16;
  std::size_t max_hops = 3;
};

/// Grammar-constrained beam search: even path positions take a relation token
/// (or <eos> once at least one hop is complete), odd positions take an entity
/// token, and position 2*max_hops only <eos>. Next-token probabilities are
/// renormalized over the allowed tokens. Each step keeps the beam_size best
/// candidates by cumulative log-probability; candidates ending in <eos> leave
/// the beam. Returns up to beam_size finished hypotheses ordered by score(),
/// ties by token sequence.
template <typename T>
std::vector<std::vector<Hypothesis>> beam_search(const SquireModel<T>& model, const Vocabulary& vocab,
                                                 std::span<const Query> queries,
                                                 const BeamOptions& options);

template <typename T>
std::vector<Hypothesis> beam_search(const SquireModel<T>& model, const Vocabulary& vocab, Query query,
                                    const BeamOptions& options);

/// The best `beam_size` unfinished prefixes with exactly `hops` hops, ordered by
/// cumulative log-probability. <eos> is never emitted.
template <typename T>
std::vector<std::vector<Hypothesis>> beam_prefixes(const SquireModel<T>& model, const Vocabulary& vocab,
                                                   std::span<const Query> queries, std::size_t hops,
                                                   std::size_t beam_size);

struct RankedEntity {
  TokenId entity = 0;
  double score = 0.0;
  std::vector<TokenId> path;
};

/// Entities ordered by score descending, ties by entity id ascending.
struct RankingResult {
  std::vector<RankedEntity> entries;

  std::optional<double> score_of(TokenId entity) const;
  const RankedEntity* find(TokenId entity) const;
};

/// Score of an entity = best score() among the hypotheses reaching it.
RankingResult rank_max(std::span<const Hypothesis> hypotheses);

/// Score of an entity = sum of exp(sum_logprob) over the hypotheses reaching it.
/// The reported path is the reaching hypothesis with the best score().
RankingResult rank_self_consistency(std::span<const Hypothesis> hypotheses);

/// Keeps finished hypotheses whose every hop, walked from `head`, is in `allowed`.
std::vector<Hypothesis> filter_by_edge_constraint(std::span<const Hypothesis> hypotheses, TokenId head,
                                                  const FactSet& allowed);

/// True when every hop of the path, walked from `head`, is in `allowed`.
bool path_within(std::span<const TokenId> path, TokenId head, const FactSet& allowed);

}  // namespace squire
