// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "squire/kg_store.hpp"
#include "squire/rng.hpp"

namespace squire {

/// head(X, Y) <- body[0](X, A1) ^ body[1](A1, A2) ^ ... ^ body[n-1](An-1, Y)
struct ChainRule {
  TokenId head = 0;
  std::vector<TokenId> body;
  double confidence = 0.0;
  /// Pairs (x, y) connected by the body for which head(x, y) holds.
  std::size_t support = 0;
  /// Pairs (x, y) connected by the body.
  std::size_t body_count = 0;

  friend bool operator==(const ChainRule&, const ChainRule&) = default;
};

struct MinerOptions {
  std::size_t max_body_len = 3;
  std::size_t min_support = 1;
  /// Training triples whose paths are abstracted into candidate bodies;
  /// every triple is used when the budget covers the training split.
  std::size_t sample_budget = 100000;
  /// Per-triple cap on enumerated alternative paths.
  std::size_t path_cap = 10000;
  std::uint64_t seed = 0;
};

/// Mines chain rules by abstracting alternative paths of sampled training
/// triples and scoring each distinct (head, body) by exact counting over the
/// training graph. Rules for r^-1 are derived from the rules for r by reversing
/// and inverting the body; counts are symmetric. Output is sorted by confidence
/// desc, then support desc, then body (lexicographic), then head.
std::vector<ChainRule> mine_rules(const KnowledgeGraph& graph, const MinerOptions& options);

/// Exact (body_count, support) of a rule over the training graph.
std::pair<std::size_t, std::size_t> count_rule(const KnowledgeGraph& graph, TokenId head,
                                               std::span<const TokenId> body);

/// Rules with confidence strictly above the threshold, order preserved.
std::vector<ChainRule> select_golden_rules(std::span<const ChainRule> rules, double threshold);

/// Golden rules grouped by head relation token, each list in the input order.
using RuleIndex = std::map<TokenId, std::vector<ChainRule>>;
RuleIndex index_rules(std::span<const ChainRule> rules);

/// Instantiates the rule body from h to t, picking uniformly among all
/// instantiations. The explained edge (h, rule.head, t) and its inverse are not
/// traversable. Returns (r1, e1, ..., rn, t) without <eos>.
std::optional<std::vector<TokenId>> rule_guided_path(const KnowledgeGraph& graph, TokenId h,
                                                     TokenId t, const ChainRule& rule, Rng& rng);

/// TSV: head<TAB>body tokens comma-separated<TAB>confidence<TAB>support
void write_rules(const std::filesystem::path& path, std::span<const ChainRule> rules,
                 const Vocabulary& vocab);
std::vector<ChainRule> read_rules(const std::filesystem::path& path, const Vocabulary& vocab);

}  // namespace squire
