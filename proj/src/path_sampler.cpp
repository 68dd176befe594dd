// SPDX-License-Identifier: Apache-2.0

#include "squire/path_sampler.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace squire {

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::kRule: return "rule";
    case Provenance::kRandom: return "random";
    case Provenance::kFallback: return "fallback";
    case Provenance::kAggregated: return "aggregated";
  }
  return "unknown";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "rule") return Provenance::kRule;
  if (s == "random") return Provenance::kRandom;
  if (s == "fallback") return Provenance::kFallback;
  if (s == "aggregated") return Provenance::kAggregated;
  throw DataError("unknown provenance '" + std::string(s) + "'");
}

namespace {

std::optional<std::vector<TokenId>> walk_to(const KnowledgeGraph& graph, TokenId h, TokenId t,
                                            const SamplerOptions& options, Rng& rng,
                                            std::span<const Fact> blocked) {
  for (std::size_t attempt = 0; attempt < options.walk_attempts; ++attempt) {
    std::vector<TokenId> path;
    TokenId x = h;
    for (std::size_t hop = 0; hop < options.max_hops; ++hop) {
      auto out = graph.edges(x);
      if (out.empty()) break;
      const Edge& e = out[uniform_index(rng, out.size())];
      if (std::find(blocked.begin(), blocked.end(), Fact{x, e.relation, e.target}) != blocked.end()) break;
      path.push_back(e.relation);
      path.push_back(e.target);
      x = e.target;
      if (x == t) {
        path.push_back(graph.vocab().eos());
        return path;
      }
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<std::vector<TokenId>> random_path(const KnowledgeGraph& graph, TokenId h, TokenId t,
                                                const SamplerOptions& options, Rng& rng,
                                                std::span<const Fact> excluded) {
  if (options.max_hops == 0) return std::nullopt;
  auto paths = enumerate_paths(graph, h, t, options.max_hops, options.enumeration_cap, excluded);
  if (paths.size() <= options.enumeration_cap) {
    if (paths.empty()) return std::nullopt;
    auto path = std::move(paths[uniform_index(rng, paths.size())]);
    path.push_back(graph.vocab().eos());
    return path;
  }
  std::vector<Fact> blocked;
  for (const Fact& f : excluded) {
    blocked.push_back(f);
    blocked.push_back({f.tail, graph.vocab().inverse(f.relation), f.head});
  }
  return walk_to(graph, h, t, options, rng, blocked);
}

std::vector<QueryPathPair> make_training_pairs(const KnowledgeGraph& graph, const Fact& fact,
                                               const RuleIndex& golden_rules,
                                               std::size_t pairs_per_triple,
                                               const SamplerOptions& options, Rng& rng) {
  std::vector<QueryPathPair> pairs;
  pairs.reserve(pairs_per_triple);
  const TokenId eos = graph.vocab().eos();
  if (auto it = golden_rules.find(fact.relation); it != golden_rules.end()) {
    for (const ChainRule& rule : it->second) {
      if (pairs.size() == pairs_per_triple) break;
      if (rule.body.size() > options.max_hops) continue;
      if (auto path = rule_guided_path(graph, fact.head, fact.tail, rule, rng)) {
        path->push_back(eos);
        pairs.push_back({fact.head, fact.relation, std::move(*path), Provenance::kRule});
      }
    }
  }
  while (pairs.size() < pairs_per_triple) {
    if (auto path = random_path(graph, fact.head, fact.tail, options, rng)) {
      // Sampling the literal edge itself yields exactly the fallback target.
      const bool literal = path->size() == 3 && (*path)[0] == fact.relation;
      pairs.push_back({fact.head, fact.relation, std::move(*path),
                       literal ? Provenance::kFallback : Provenance::kRandom});
    } else {
      pairs.push_back({fact.head, fact.relation, {fact.relation, fact.tail, eos}, Provenance::kFallback});
    }
  }
  return pairs;
}

MaskedPath mask_entities(const QueryPathPair& pair, const Vocabulary& vocab, double p, Rng& rng) {
  MaskedPath out{pair.path, std::vector<bool>(pair.path.size(), false)};
  std::bernoulli_distribution coin(p);
  for (std::size_t i = 0; i < out.tokens.size(); ++i) {
    if (!vocab.is_entity(out.tokens[i])) continue;
    if (coin(rng)) {
      out.tokens[i] = vocab.mask();
      out.excluded[i] = true;
    }
  }
  return out;
}

void write_pairs(const std::filesystem::path& path, std::span<const QueryPathPair> pairs,
                 const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& pair : pairs) {
    out << vocab.token_of(pair.head) << '\t' << vocab.token_of(pair.relation) << '\t';
    for (std::size_t i = 0; i < pair.path.size(); ++i) {
      if (i) out << ',';
      out << vocab.token_of(pair.path[i]);
    }
    out << '\t' << to_string(pair.provenance) << '\n';
  }
}

std::vector<QueryPathPair> read_pairs(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<QueryPathPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != 4) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": expected 4 fields");
    }
    QueryPathPair pair;
    pair.head = vocab.require(fields[0]);
    pair.relation = vocab.require(fields[1]);
    std::stringstream tokens(fields[2]);
    while (std::getline(tokens, field, ',')) pair.path.push_back(vocab.require(field));
    pair.provenance = provenance_from_string(fields[3]);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

bool is_graph_path(const KnowledgeGraph& graph, TokenId head, std::span<const TokenId> path) {
  const auto& vocab = graph.vocab();
  if (path.size() < 3 || path.size() % 2 == 0 || path.back() != vocab.eos()) return false;
  TokenId x = head;
  for (std::size_t i = 0; i + 1 < path.size(); i += 2) {
    if (!vocab.is_relation(path[i]) || !vocab.is_entity(path[i + 1])) return false;
    if (!graph.has_edge(x, path[i], path[i + 1])) return false;
    x = path[i + 1];
  }
  return true;
}

}  // namespace squire
