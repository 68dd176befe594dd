// SPDX-License-Identifier: Apache-2.0

#include "squire/kg_store.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace squire {

std::int32_t NameTable::intern_entity(std::string_view name) {
  auto [it, inserted] =
      entity_index_.try_emplace(std::string(name), static_cast<std::int32_t>(entities_.size()));
  if (inserted) entities_.emplace_back(name);
  return it->second;
}

std::int32_t NameTable::intern_relation(std::string_view name) {
  auto [it, inserted] =
      relation_index_.try_emplace(std::string(name), static_cast<std::int32_t>(relations_.size()));
  if (inserted) relations_.emplace_back(name);
  return it->second;
}

std::optional<std::int32_t> NameTable::find_entity(std::string_view name) const {
  auto it = entity_index_.find(std::string(name));
  if (it == entity_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::int32_t> NameTable::find_relation(std::string_view name) const {
  auto it = relation_index_.find(std::string(name));
  if (it == relation_index_.end()) return std::nullopt;
  return it->second;
}

Vocabulary::Vocabulary(std::vector<std::string> entity_names, std::vector<std::string> relation_names)
    : num_entities_(entity_names.size()), num_relations_(relation_names.size()) {
  names_.reserve(num_entities_ + 2 * num_relations_ + 3);
  for (auto& e : entity_names) names_.push_back(std::move(e));
  for (const auto& r : relation_names) names_.push_back(r);
  for (const auto& r : relation_names) names_.push_back(r + std::string(kInverseSuffix));
  names_.emplace_back("<bos>");
  names_.emplace_back("<eos>");
  names_.emplace_back("<mask>");
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!ids_.emplace(names_[i], static_cast<TokenId>(i)).second) {
      throw DataError("vocabulary: token name '" + names_[i] + "' is used twice");
    }
  }
}

TokenId Vocabulary::inverse(TokenId relation_token) const {
  if (!is_relation(relation_token)) {
    throw std::invalid_argument("inverse: token " + std::to_string(relation_token) + " is not a relation");
  }
  const auto n = static_cast<TokenId>(num_relations_);
  return is_inverse(relation_token) ? relation_token - n : relation_token + n;
}

std::int32_t Vocabulary::base_relation(TokenId relation_token) const {
  if (!is_relation(relation_token)) {
    throw std::invalid_argument("base_relation: token " + std::to_string(relation_token) +
                                " is not a relation");
  }
  const auto offset = relation_token - static_cast<TokenId>(num_entities_);
  return offset % static_cast<std::int32_t>(num_relations_);
}

std::optional<TokenId> Vocabulary::id_of(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::require(std::string_view token) const {
  if (auto id = id_of(token)) return *id;
  throw DataError("unknown token '" + std::string(token) + "'");
}

void Vocabulary::dump(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& name : names_) out << name << '\n';
}

std::span<const Edge> KnowledgeGraph::edges(TokenId entity) const {
  if (!vocab_.is_entity(entity)) return {};
  return adjacency_[static_cast<std::size_t>(entity)];
}

std::span<const Edge> KnowledgeGraph::edges(TokenId entity, TokenId relation) const {
  auto all = edges(entity);
  auto lo = std::lower_bound(all.begin(), all.end(), Edge{relation, std::numeric_limits<TokenId>::min()});
  auto hi = std::upper_bound(lo, all.end(), Edge{relation, std::numeric_limits<TokenId>::max()});
  return {lo, hi};
}

bool KnowledgeGraph::has_edge(TokenId head, TokenId relation, TokenId tail) const {
  auto all = edges(head);
  return std::binary_search(all.begin(), all.end(), Edge{relation, tail});
}

Fact KnowledgeGraph::forward_fact(const Triple& t) const {
  return {vocab_.entity_token(t.head), vocab_.relation_token(t.relation), vocab_.entity_token(t.tail)};
}

Fact KnowledgeGraph::inverse_fact(const Triple& t) const {
  return {vocab_.entity_token(t.tail), vocab_.relation_token(t.relation, true), vocab_.entity_token(t.head)};
}

std::vector<Triple> parse_triples(std::string_view text, NameTable& names) {
  std::vector<Triple> triples;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3) {
      throw DataError("line " + std::to_string(line_no) + ": expected 3 fields, got " +
                      std::to_string(fields.size()));
    }
    Triple t;
    t.head = names.intern_entity(fields[0]);
    t.relation = names.intern_relation(fields[1]);
    t.tail = names.intern_entity(fields[2]);
    triples.push_back(t);
  }
  return triples;
}

std::vector<Triple> load_triples(const std::filesystem::path& path, NameTable& names) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_triples(buffer.str(), names);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

KnowledgeGraph build_graph(NameTable names, std::vector<Triple> train, std::vector<Triple> valid,
                           std::vector<Triple> test) {
  KnowledgeGraph g;
  g.vocab_ = Vocabulary(names.entities(), names.relations());
  const auto check_ids = [&](const std::vector<Triple>& split) {
    for (const auto& t : split) {
      if (t.head < 0 || static_cast<std::size_t>(t.head) >= names.entities().size() || t.tail < 0 ||
          static_cast<std::size_t>(t.tail) >= names.entities().size() || t.relation < 0 ||
          static_cast<std::size_t>(t.relation) >= names.relations().size()) {
        throw DataError("triple refers to an unregistered entity or relation");
      }
    }
  };
  check_ids(train);
  check_ids(valid);
  check_ids(test);

  std::set<Triple> seen;
  std::vector<Triple> unique_train;
  for (const auto& t : train) {
    if (seen.insert(t).second) unique_train.push_back(t);
  }
  const auto check_disjoint = [&](const std::vector<Triple>& split, const char* name,
                                  std::set<Triple>& against) {
    std::set<Triple> local;
    for (const auto& t : split) {
      if (against.contains(t)) {
        throw DataError(std::string("split overlap: ") + name + " triple (" + names.entities()[t.head] +
                        ", " + names.relations()[t.relation] + ", " + names.entities()[t.tail] +
                        ") also appears in an earlier split");
      }
      local.insert(t);
    }
    return local;
  };
  std::set<Triple> valid_set = check_disjoint(valid, "valid", seen);
  std::set<Triple> train_and_valid = seen;
  train_and_valid.insert(valid_set.begin(), valid_set.end());
  check_disjoint(test, "test", train_and_valid);

  g.train_ = std::move(unique_train);
  g.valid_ = std::move(valid);
  g.test_ = std::move(test);
  g.adjacency_.assign(g.vocab_.num_entities(), {});
  for (const auto& t : g.train_) {
    const Fact f = g.forward_fact(t);
    const Fact b = g.inverse_fact(t);
    g.adjacency_[static_cast<std::size_t>(f.head)].push_back({f.relation, f.tail});
    g.adjacency_[static_cast<std::size_t>(b.head)].push_back({b.relation, b.tail});
    g.train_facts_.insert(f);
    g.train_facts_.insert(b);
  }
  for (auto& list : g.adjacency_) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
    g.num_edges_ += list.size();
  }
  for (const auto* split : {&g.train_, &g.valid_, &g.test_}) {
    for (const auto& t : *split) {
      g.known_true_.insert(g.forward_fact(t));
      g.known_true_.insert(g.inverse_fact(t));
    }
  }
  return g;
}

KnowledgeGraph load_dataset(const std::filesystem::path& dir) {
  NameTable names;
  auto train = load_triples(dir / "train.txt", names);
  auto valid = load_triples(dir / "valid.txt", names);
  auto test = load_triples(dir / "test.txt", names);
  return build_graph(std::move(names), std::move(train), std::move(valid), std::move(test));
}

std::vector<TokenId> neighbors(const KnowledgeGraph& graph, TokenId entity, TokenId relation) {
  std::vector<TokenId> out;
  for (const Edge& e : graph.edges(entity, relation)) out.push_back(e.target);
  return out;
}

namespace {

/// Hop distance to `target` for entities within `depth` hops. Adjacency contains
/// every edge in both directions, so BFS from the target gives distances towards it.
std::unordered_map<TokenId, std::size_t> distances_to(const KnowledgeGraph& graph, TokenId target,
                                                      std::size_t depth) {
  std::unordered_map<TokenId, std::size_t> dist{{target, 0}};
  std::deque<TokenId> frontier{target};
  while (!frontier.empty()) {
    const TokenId x = frontier.front();
    frontier.pop_front();
    const std::size_t d = dist[x];
    if (d == depth) continue;
    for (const Edge& e : graph.edges(x)) {
      if (dist.try_emplace(e.target, d + 1).second) frontier.push_back(e.target);
    }
  }
  return dist;
}

struct PathSearch {
  const KnowledgeGraph& graph;
  TokenId head;
  TokenId tail;
  std::size_t max_hops;
  std::size_t cap;
  std::vector<Fact> blocked;
  std::unordered_map<TokenId, std::size_t> dist;
  std::vector<TokenId> current;
  std::vector<TokenId> visited;
  std::vector<std::vector<TokenId>> found;

  bool is_blocked(TokenId x, TokenId rel, TokenId y) const {
    const Fact f{x, rel, y};
    return std::find(blocked.begin(), blocked.end(), f) != blocked.end();
  }

  // Returns false once the cap is exceeded.
  bool run(TokenId x, std::size_t hops) {
    for (const Edge& e : graph.edges(x)) {
      if (!blocked.empty() && is_blocked(x, e.relation, e.target)) continue;
      if (e.target == tail) {
        current.push_back(e.relation);
        current.push_back(e.target);
        found.push_back(current);
        current.resize(current.size() - 2);
        if (found.size() > cap) return false;
        continue;
      }
      if (hops + 1 >= max_hops || e.target == head) continue;
      auto d = dist.find(e.target);
      if (d == dist.end() || d->second > max_hops - hops - 1) continue;
      if (std::find(visited.begin(), visited.end(), e.target) != visited.end()) continue;
      current.push_back(e.relation);
      current.push_back(e.target);
      visited.push_back(e.target);
      const bool ok = run(e.target, hops + 1);
      visited.pop_back();
      current.resize(current.size() - 2);
      if (!ok) return false;
    }
    return true;
  }
};

}  // namespace

std::vector<std::vector<TokenId>> enumerate_paths(const KnowledgeGraph& graph, TokenId head,
                                                  TokenId tail, std::size_t max_hops,
                                                  std::size_t cap, std::span<const Fact> excluded) {
  if (max_hops == 0 || !graph.vocab().is_entity(head) || !graph.vocab().is_entity(tail)) return {};
  PathSearch search{graph, head, tail, max_hops, cap, {}, {}, {}, {}, {}};
  for (const Fact& f : excluded) {
    search.blocked.push_back(f);
    search.blocked.push_back({f.tail, graph.vocab().inverse(f.relation), f.head});
  }
  search.dist = distances_to(graph, tail, max_hops - 1);
  search.run(head, 0);
  return std::move(search.found);
}

}  // namespace squire
