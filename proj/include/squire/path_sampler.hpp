// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "squire/kg_store.hpp"
#include "squire/rng.hpp"
#include "squire/rule_miner.hpp"

namespace squire {

enum class Provenance { kRule, kRandom, kFallback, kAggregated };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

/// One training sample: query (head, relation) and path tokens
/// (r1, e1, ..., rn, en, <eos>).
struct QueryPathPair {
  TokenId head = 0;
  TokenId relation = 0;
  std::vector<TokenId> path;
  Provenance provenance = Provenance::kRandom;

  std::size_t hops() const { return path.size() / 2; }
  friend bool operator==(const QueryPathPair&, const QueryPathPair&) = default;
};

struct SamplerOptions {
  std::size_t max_hops = 3;
  /// Uniform choice over the enumerated path set up to this many paths.
  std::size_t enumeration_cap = 10000;
  /// Random walks tried when enumeration overflows.
  std::size_t walk_attempts = 32;
};

/// A path of at most `options.max_hops` hops from h to t, ending with <eos>.
/// `excluded` edges (both directions) are never used.
std::optional<std::vector<TokenId>> random_path(const KnowledgeGraph& graph, TokenId h, TokenId t,
                                                const SamplerOptions& options, Rng& rng,
                                                std::span<const Fact> excluded = {});

/// Exactly `pairs_per_triple` pairs for the directed fact: golden rules for
/// fact.relation first (highest confidence first, skipping rules without an
/// instantiation), then random paths, then the single-edge fallback.
std::vector<QueryPathPair> make_training_pairs(const KnowledgeGraph& graph, const Fact& fact,
                                               const RuleIndex& golden_rules,
                                               std::size_t pairs_per_triple,
                                               const SamplerOptions& options, Rng& rng);

/// Path tokens with masked entities replaced by <mask>, and a parallel flag per
/// token marking positions excluded from the loss.
struct MaskedPath {
  std::vector<TokenId> tokens;
  std::vector<bool> excluded;
};

MaskedPath mask_entities(const QueryPathPair& pair, const Vocabulary& vocab, double p, Rng& rng);

/// TSV dump: head<TAB>relation<TAB>path tokens comma-separated<TAB>provenance
void write_pairs(const std::filesystem::path& path, std::span<const QueryPathPair> pairs,
                 const Vocabulary& vocab);
std::vector<QueryPathPair> read_pairs(const std::filesystem::path& path, const Vocabulary& vocab);

/// True when the path alternates relation/entity tokens, ends with <eos> and
/// every hop is an adjacency edge starting from `head`.
bool is_graph_path(const KnowledgeGraph& graph, TokenId head, std::span<const TokenId> path);

}  // namespace squire
