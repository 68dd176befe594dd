// SPDX-License-Identifier: Apache-2.0

#include "support/oracles.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <string>

#include "squire/rng.hpp"

namespace squire::testing {

KnowledgeGraph random_graph(std::uint64_t seed, std::size_t entities, std::size_t relations,
                            std::size_t edges) {
  Rng rng = derive_rng(seed, 77);
  NameTable names;
  for (std::size_t e = 0; e < entities; ++e) names.intern_entity("e" + std::to_string(e));
  for (std::size_t r = 0; r < relations; ++r) names.intern_relation("p" + std::to_string(r));
  std::set<Triple> triples;
  for (std::size_t i = 0; i < edges; ++i) {
    triples.insert(Triple{static_cast<std::int32_t>(uniform_index(rng, entities)),
                          static_cast<std::int32_t>(uniform_index(rng, relations)),
                          static_cast<std::int32_t>(uniform_index(rng, entities))});
  }
  return build_graph(std::move(names), {triples.begin(), triples.end()}, {}, {});
}

RelationMatrices::RelationMatrices(const KnowledgeGraph& graph)
    : n_(graph.num_entities()), empty_(n_, std::vector<char>(n_, 0)) {
  const auto& vocab = graph.vocab();
  for (const Triple& t : graph.train()) {
    const TokenId forward = vocab.relation_token(t.relation);
    const TokenId backward = vocab.relation_token(t.relation, true);
    auto& f = by_relation_.try_emplace(forward, empty_).first->second;
    auto& b = by_relation_.try_emplace(backward, empty_).first->second;
    f[static_cast<std::size_t>(t.head)][static_cast<std::size_t>(t.tail)] = 1;
    b[static_cast<std::size_t>(t.tail)][static_cast<std::size_t>(t.head)] = 1;
  }
}

const RelationMatrices::Matrix& RelationMatrices::matrix(TokenId relation) const {
  auto it = by_relation_.find(relation);
  return it == by_relation_.end() ? empty_ : it->second;
}

std::pair<std::size_t, std::size_t> RelationMatrices::count(TokenId head, std::span<const TokenId> body) const {
  Matrix reach(n_, std::vector<char>(n_, 0));
  for (std::size_t i = 0; i < n_; ++i) reach[i][i] = 1;
  for (TokenId rel : body) {
    const Matrix& m = matrix(rel);
    Matrix next(n_, std::vector<char>(n_, 0));
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t k = 0; k < n_; ++k) {
        if (!reach[i][k]) continue;
        for (std::size_t j = 0; j < n_; ++j) next[i][j] |= m[k][j];
      }
    }
    reach = std::move(next);
  }
  const Matrix& h = matrix(head);
  std::size_t body_count = 0, support = 0;
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < n_; ++j) {
      body_count += reach[i][j] ? 1 : 0;
      support += (reach[i][j] && h[i][j]) ? 1 : 0;
    }
  }
  return {body_count, support};
}

bool hops_exist(const KnowledgeGraph& graph, TokenId head, std::span<const TokenId> path) {
  const auto& vocab = graph.vocab();
  std::set<Fact> facts;
  for (const Triple& t : graph.train()) {
    facts.insert(graph.forward_fact(t));
    facts.insert(graph.inverse_fact(t));
  }
  TokenId x = head;
  for (std::size_t i = 0; i + 1 < path.size(); i += 2) {
    if (!vocab.is_relation(path[i]) || !facts.contains(Fact{x, path[i], path[i + 1]})) return false;
    x = path[i + 1];
  }
  return path.size() % 2 == 0 || path.back() == vocab.eos();
}

std::vector<std::vector<TokenId>> brute_force_paths(const KnowledgeGraph& graph, TokenId head, TokenId tail,
                                                    std::size_t max_hops) {
  std::vector<Fact> facts;
  for (const Triple& t : graph.train()) {
    facts.push_back(graph.forward_fact(t));
    facts.push_back(graph.inverse_fact(t));
  }
  std::vector<std::vector<TokenId>> out;
  std::vector<std::vector<TokenId>> frontier{{}};
  for (std::size_t hop = 1; hop <= max_hops; ++hop) {
    std::vector<std::vector<TokenId>> next;
    for (const auto& walk : frontier) {
      const TokenId at = walk.empty() ? head : walk.back();
      for (const Fact& f : facts) {
        if (f.head != at) continue;
        auto extended = walk;
        extended.push_back(f.relation);
        extended.push_back(f.tail);
        next.push_back(std::move(extended));
      }
    }
    for (const auto& walk : next) {
      if (walk.back() != tail) continue;
      std::set<TokenId> seen;
      bool simple = true;
      for (std::size_t i = 1; i + 1 < walk.size(); i += 2) {
        if (walk[i] == head || walk[i] == tail || !seen.insert(walk[i]).second) simple = false;
      }
      if (simple) out.push_back(walk);
    }
    frontier = std::move(next);
  }
  std::sort(out.begin(), out.end());
  return out;
}

ScoreTable random_score_table(std::uint64_t seed) {
  Rng rng = derive_rng(seed, 4242);
  ScoreTable table;
  table.num_entities = 2 + uniform_index(rng, 40);
  const std::size_t levels = 1 + uniform_index(rng, 8);  // few levels give many ties
  for (std::size_t e = 0; e < table.num_entities; ++e) {
    if (uniform_index(rng, 4) == 0) continue;
    table.scores[static_cast<TokenId>(e)] = -static_cast<double>(uniform_index(rng, levels)) / 4.0;
  }
  table.gold = static_cast<TokenId>(uniform_index(rng, table.num_entities));
  for (std::size_t e = 0; e < table.num_entities; ++e) {
    if (uniform_index(rng, 5) == 0) table.known_true.push_back(static_cast<TokenId>(e));
  }
  return table;
}

std::size_t brute_force_rank(const ScoreTable& table) {
  if (!table.scores.contains(table.gold)) return table.num_entities;
  const double minus_inf = -std::numeric_limits<double>::infinity();
  std::vector<std::pair<double, int>> candidates;  // (score, 0 for competitors / 1 for gold)
  for (std::size_t e = 0; e < table.num_entities; ++e) {
    const auto id = static_cast<TokenId>(e);
    if (id == table.gold) {
      candidates.emplace_back(table.scores.at(id), 1);
      continue;
    }
    if (std::find(table.known_true.begin(), table.known_true.end(), id) != table.known_true.end()) continue;
    const auto it = table.scores.find(id);
    candidates.emplace_back(it == table.scores.end() ? minus_inf : it->second, 0);
  }
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].second == 1) return i + 1;
  }
  return table.num_entities;
}

std::vector<double> brute_force_metrics(const std::vector<std::size_t>& ranks) {
  std::vector<double> out;
  double mrr = 0;
  for (std::size_t r : ranks) mrr += 1.0 / static_cast<double>(r);
  out.push_back(mrr / static_cast<double>(ranks.size()));
  for (std::size_t cutoff : {1u, 3u, 10u}) {
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [&](std::size_t r) { return r <= cutoff; });
    out.push_back(static_cast<double>(hits) / static_cast<double>(ranks.size()));
  }
  return out;
}

}  // namespace squire::testing
