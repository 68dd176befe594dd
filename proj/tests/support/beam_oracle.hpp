// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "squire/inference.hpp"
#include "squire/model.hpp"

namespace squire::testing {

/// Every grammatical path of 1..max_hops hops scored token by token with one
/// unbatched forward pass per prefix, sorted by length-normalized score then
/// by token sequence.
template <typename T>
std::vector<Hypothesis> exhaustive_paths(const SquireModel<T>& model, const Vocabulary& vocab, Query query,
                                         std::size_t max_hops) {
  std::vector<Hypothesis> out;
  std::vector<TokenId> prefix;
  const auto allowed_at = [&](std::size_t position) {
    std::vector<TokenId> allowed;
    if (position % 2 == 1) {
      for (std::size_t e = 0; e < vocab.num_entities(); ++e) allowed.push_back(static_cast<TokenId>(e));
      return allowed;
    }
    if (position < 2 * max_hops) {
      for (std::size_t r = 0; r < vocab.num_relation_tokens(); ++r) {
        allowed.push_back(static_cast<TokenId>(vocab.num_entities() + r));
      }
    }
    if (position >= 2) allowed.push_back(vocab.eos());
    return allowed;
  };
  const auto visit = [&](auto&& self, double logprob) -> void {
    const auto dist = next_token_distribution<T>(model, query.head, query.relation, prefix);
    const auto allowed = allowed_at(prefix.size());
    double mass = 0;
    for (TokenId t : allowed) mass += static_cast<double>(dist[t]);
    for (TokenId t : allowed) {
      const double lp = logprob + std::log(static_cast<double>(dist[t]) / mass);
      prefix.push_back(t);
      if (t == vocab.eos()) {
        out.push_back(Hypothesis{prefix, lp, true});
      } else {
        self(self, lp);
      }
      prefix.pop_back();
    }
  };
  visit(visit, 0.0);
  std::sort(out.begin(), out.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.score() != b.score()) return a.score() > b.score();
    return a.tokens < b.tokens;
  });
  return out;
}

/// Number of grammatical paths with 1..max_hops hops.
inline std::size_t grammatical_path_count(const Vocabulary& vocab, std::size_t max_hops) {
  std::size_t total = 0, per_hop = vocab.num_entities() * vocab.num_relation_tokens(), count = 1;
  for (std::size_t k = 1; k <= max_hops; ++k) {
    count *= per_hop;
    total += count;
  }
  return total;
}

}  // namespace squire::testing
