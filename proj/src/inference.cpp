// SPDX-License-Identifier: Apache-2.0

#include "squire/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace squire {

namespace {

constexpr std::size_t kForwardChunk = 4096;

struct Candidate {
  std::size_t parent = 0;
  TokenId token = 0;
  double logprob = 0.0;
};

bool candidate_before(const Candidate& a, const Candidate& b) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  if (a.parent != b.parent) return a.parent < b.parent;
  return a.token < b.token;
}

bool hypothesis_before(const Hypothesis& a, const Hypothesis& b) {
  const double sa = a.score();
  const double sb = b.score();
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;
}

/// Token ranges that may follow a prefix of the given length.
struct Grammar {
  const Vocabulary& vocab;
  std::size_t max_hops;
  bool allow_eos;

  void allowed(std::size_t position, std::vector<TokenId>& out) const {
    out.clear();
    if (position % 2 == 1) {
      for (std::size_t e = 0; e < vocab.num_entities(); ++e) out.push_back(static_cast<TokenId>(e));
      return;
    }
    if (position < 2 * max_hops) {
      const auto first = static_cast<TokenId>(vocab.num_entities());
      for (std::size_t r = 0; r < vocab.num_relation_tokens(); ++r) {
        out.push_back(first + static_cast<TokenId>(r));
      }
    }
    if (allow_eos && position >= 2) out.push_back(vocab.eos());
  }
};

/// Runs batched next-token scoring for every alive hypothesis of every query.
template <typename T>
std::vector<std::vector<double>> score_step(const SquireModel<T>& model, std::span<const Query> queries,
                                            const std::vector<std::vector<Hypothesis>>& alive,
                                            std::span<const TokenId> allowed) {
  std::vector<std::vector<TokenId>> sequences;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (const auto& hyp : alive[q]) {
      std::vector<TokenId> seq{queries[q].head, queries[q].relation};
      seq.insert(seq.end(), hyp.tokens.begin(), hyp.tokens.end());
      sequences.push_back(std::move(seq));
    }
  }
  std::vector<std::vector<double>> out;
  out.reserve(sequences.size());
  for (std::size_t begin = 0; begin < sequences.size(); begin += kForwardChunk) {
    const std::size_t end = std::min(sequences.size(), begin + kForwardChunk);
    const Tensor<T> logits =
        final_position_logits(model, std::span(sequences).subspan(begin, end - begin));
    for (std::size_t row = 0; row < end - begin; ++row) {
      const auto values = logits.row(row);
      double max_logit = -std::numeric_limits<double>::infinity();
      for (TokenId t : allowed) max_logit = std::max(max_logit, static_cast<double>(values[t]));
      double total = 0.0;
      for (TokenId t : allowed) total += std::exp(static_cast<double>(values[t]) - max_logit);
      const double log_norm = max_logit + std::log(total);
      std::vector<double> logprobs(allowed.size());
      for (std::size_t i = 0; i < allowed.size(); ++i) {
        logprobs[i] = static_cast<double>(values[allowed[i]]) - log_norm;
      }
      out.push_back(std::move(logprobs));
    }
  }
  return out;
}

template <typename T>
std::vector<std::vector<Hypothesis>> run_search(const SquireModel<T>& model, const Vocabulary& vocab,
                                                std::span<const Query> queries, std::size_t max_hops,
                                                std::size_t beam_size, bool prefixes_only) {
  if (beam_size == 0) throw std::invalid_argument("beam_size must be at least 1");
  const std::size_t steps = prefixes_only ? 2 * max_hops : 2 * max_hops + 1;
  const Grammar grammar{vocab, prefixes_only ? max_hops + 1 : max_hops, !prefixes_only};
  std::vector<std::vector<Hypothesis>> alive(queries.size(), std::vector<Hypothesis>(1));
  std::vector<std::vector<Hypothesis>> finished(queries.size());
  std::vector<TokenId> allowed;
  for (std::size_t position = 0; position < steps; ++position) {
    grammar.allowed(position, allowed);
    const auto logprobs = score_step(model, queries, alive, allowed);
    std::size_t row = 0;
    for (std::size_t q = 0; q < queries.size(); ++q) {
      std::vector<Candidate> candidates;
      candidates.reserve(alive[q].size() * allowed.size());
      for (std::size_t parent = 0; parent < alive[q].size(); ++parent, ++row) {
        for (std::size_t i = 0; i < allowed.size(); ++i) {
          candidates.push_back({parent, allowed[i], alive[q][parent].sum_logprob + logprobs[row][i]});
        }
      }
      if (candidates.size() > beam_size) {
        std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(beam_size),
                         candidates.end(), candidate_before);
        candidates.resize(beam_size);
      }
      std::sort(candidates.begin(), candidates.end(), candidate_before);
      std::vector<Hypothesis> next;
      for (const Candidate& c : candidates) {
        Hypothesis h{alive[q][c.parent].tokens, c.logprob, false};
        h.tokens.push_back(c.token);
        if (c.token == vocab.eos()) {
          h.finished = true;
          finished[q].push_back(std::move(h));
        } else {
          next.push_back(std::move(h));
        }
      }
      alive[q] = std::move(next);
    }
  }
  if (prefixes_only) return alive;
  for (auto& f : finished) {
    std::sort(f.begin(), f.end(), hypothesis_before);
    if (f.size() > beam_size) f.resize(beam_size);
  }
  return finished;
}

template <typename Score>
RankingResult rank_by(std::span<const Hypothesis> hypotheses, Score&& accumulate) {
  std::map<TokenId, RankedEntity> by_entity;
  std::map<TokenId, double> best_path_score;
  for (const auto& h : hypotheses) {
    if (!h.finished || h.tokens.size() < 3) continue;
    const TokenId e = h.terminal_entity();
    auto [it, inserted] = by_entity.try_emplace(e, RankedEntity{e, 0.0, {}});
    it->second.score = accumulate(inserted, it->second.score, h);
    auto [best, fresh] = best_path_score.try_emplace(e, h.score());
    if (fresh || h.score() > best->second || (h.score() == best->second && h.tokens < it->second.path)) {
      best->second = h.score();
      it->second.path = h.tokens;
    }
  }
  RankingResult result;
  for (auto& [e, entry] : by_entity) result.entries.push_back(std::move(entry));
  std::stable_sort(result.entries.begin(), result.entries.end(),
                   [](const RankedEntity& a, const RankedEntity& b) { return a.score > b.score; });
  return result;
}

}  // namespace

template <typename T>
std::vector<std::vector<Hypothesis>> beam_search(const SquireModel<T>& model, const Vocabulary& vocab,
                                                 std::span<const Query> queries,
                                                 const BeamOptions& options) {
  if (options.max_hops == 0) throw std::invalid_argument("max_hops must be at least 1");
  return run_search(model, vocab, queries, options.max_hops, options.beam_size, false);
}

template <typename T>
std::vector<Hypothesis> beam_search(const SquireModel<T>& model, const Vocabulary& vocab, Query query,
                                    const BeamOptions& options) {
  return beam_search(model, vocab, std::span(&query, 1), options).front();
}

template <typename T>
std::vector<std::vector<Hypothesis>> beam_prefixes(const SquireModel<T>& model, const Vocabulary& vocab,
                                                   std::span<const Query> queries, std::size_t hops,
                                                   std::size_t beam_size) {
  if (hops == 0) return std::vector<std::vector<Hypothesis>>(queries.size(), std::vector<Hypothesis>(1));
  return run_search(model, vocab, queries, hops, beam_size, true);
}

std::optional<double> RankingResult::score_of(TokenId entity) const {
  if (const auto* e = find(entity)) return e->score;
  return std::nullopt;
}

const RankedEntity* RankingResult::find(TokenId entity) const {
  for (const auto& e : entries) {
    if (e.entity == entity) return &e;
  }
  return nullptr;
}

RankingResult rank_max(std::span<const Hypothesis> hypotheses) {
  return rank_by(hypotheses, [](bool first, double current, const Hypothesis& h) {
    return first ? h.score() : std::max(current, h.score());
  });
}

RankingResult rank_self_consistency(std::span<const Hypothesis> hypotheses) {
  return rank_by(hypotheses, [](bool first, double current, const Hypothesis& h) {
    return (first ? 0.0 : current) + std::exp(h.sum_logprob);
  });
}

bool path_within(std::span<const TokenId> path, TokenId head, const FactSet& allowed) {
  TokenId x = head;
  for (std::size_t i = 0; i + 1 < path.size(); i += 2) {
    if (!allowed.contains(Fact{x, path[i], path[i + 1]})) return false;
    x = path[i + 1];
  }
  return true;
}

std::vector<Hypothesis> filter_by_edge_constraint(std::span<const Hypothesis> hypotheses, TokenId head,
                                                  const FactSet& allowed) {
  std::vector<Hypothesis> out;
  for (const auto& h : hypotheses) {
    if (h.finished && path_within(h.tokens, head, allowed)) out.push_back(h);
  }
  return out;
}

#define SQUIRE_INSTANTIATE(T)                                                                        \
  template std::vector<std::vector<Hypothesis>> beam_search<T>(                                      \
      const SquireModel<T>&, const Vocabulary&, std::span<const Query>, const BeamOptions&);         \
  template std::vector<Hypothesis> beam_search<T>(const SquireModel<T>&, const Vocabulary&, Query,   \
                                                  const BeamOptions&);                               \
  template std::vector<std::vector<Hypothesis>> beam_prefixes<T>(                                    \
      const SquireModel<T>&, const Vocabulary&, std::span<const Query>, std::size_t, std::size_t);

SQUIRE_INSTANTIATE(float)
SQUIRE_INSTANTIATE(double)

#undef SQUIRE_INSTANTIATE

}  // namespace squire
