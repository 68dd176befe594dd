// SPDX-License-Identifier: Apache-2.0

#include "squire/rule_miner.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace squire {

namespace {

bool rule_order(const ChainRule& a, const ChainRule& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.support != b.support) return a.support > b.support;
  if (a.body != b.body) return a.body < b.body;
  return a.head < b.head;
}

std::vector<TokenId> inverted_body(const Vocabulary& vocab, std::span<const TokenId> body) {
  std::vector<TokenId> out;
  out.reserve(body.size());
  for (auto it = body.rbegin(); it != body.rend(); ++it) out.push_back(vocab.inverse(*it));
  return out;
}

}  // namespace

std::pair<std::size_t, std::size_t> count_rule(const KnowledgeGraph& graph, TokenId head,
                                               std::span<const TokenId> body) {
  std::size_t body_count = 0;
  std::size_t support = 0;
  if (body.empty()) return {0, 0};
  std::vector<TokenId> frontier;
  std::vector<TokenId> next;
  for (std::size_t x = 0; x < graph.num_entities(); ++x) {
    const auto start = static_cast<TokenId>(x);
    if (graph.edges(start, body[0]).empty()) continue;
    frontier.assign(1, start);
    for (TokenId rel : body) {
      next.clear();
      for (TokenId node : frontier) {
        for (const Edge& e : graph.edges(node, rel)) next.push_back(e.target);
      }
      std::sort(next.begin(), next.end());
      next.erase(std::unique(next.begin(), next.end()), next.end());
      frontier.swap(next);
      if (frontier.empty()) break;
    }
    body_count += frontier.size();
    for (TokenId y : frontier) {
      if (graph.has_edge(start, head, y)) ++support;
    }
  }
  return {body_count, support};
}

std::vector<ChainRule> mine_rules(const KnowledgeGraph& graph, const MinerOptions& options) {
  const auto& vocab = graph.vocab();
  const auto& train = graph.train();
  if (train.empty() || options.max_body_len == 0) return {};

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (options.sample_budget < train.size()) {
    Rng rng = derive_rng(options.seed, 0);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(options.sample_budget);
    std::sort(order.begin(), order.end());
  }

  std::set<std::pair<TokenId, std::vector<TokenId>>> candidates;
  for (std::size_t index : order) {
    const Fact f = graph.forward_fact(train[index]);
    const Fact excluded[] = {f};
    const auto paths =
        enumerate_paths(graph, f.head, f.tail, options.max_body_len, options.path_cap, excluded);
    for (const auto& path : paths) {
      std::vector<TokenId> body;
      for (std::size_t i = 0; i < path.size(); i += 2) body.push_back(path[i]);
      if (body.size() == 1 && body[0] == f.relation) continue;
      candidates.emplace(f.relation, std::move(body));
    }
  }

  std::vector<ChainRule> rules;
  for (const auto& [head, body] : candidates) {
    const auto [body_count, support] = count_rule(graph, head, body);
    if (body_count == 0 || support < options.min_support) continue;
    ChainRule rule{head, body, static_cast<double>(support) / static_cast<double>(body_count), support,
                   body_count};
    ChainRule mirrored{vocab.inverse(head), inverted_body(vocab, body), rule.confidence, support,
                       body_count};
    rules.push_back(std::move(rule));
    rules.push_back(std::move(mirrored));
  }
  std::sort(rules.begin(), rules.end(), rule_order);
  return rules;
}

std::vector<ChainRule> select_golden_rules(std::span<const ChainRule> rules, double threshold) {
  std::vector<ChainRule> out;
  std::copy_if(rules.begin(), rules.end(), std::back_inserter(out),
               [threshold](const ChainRule& r) { return r.confidence > threshold; });
  return out;
}

RuleIndex index_rules(std::span<const ChainRule> rules) {
  RuleIndex index;
  for (const auto& r : rules) index[r.head].push_back(r);
  return index;
}

std::optional<std::vector<TokenId>> rule_guided_path(const KnowledgeGraph& graph, TokenId h,
                                                     TokenId t, const ChainRule& rule, Rng& rng) {
  const auto& body = rule.body;
  if (body.empty() || !graph.vocab().is_entity(h) || !graph.vocab().is_entity(t)) return std::nullopt;
  const Fact masked{h, rule.head, t};
  const Fact masked_back{t, graph.vocab().inverse(rule.head), h};
  const auto usable = [&](TokenId x, TokenId rel, TokenId y) {
    const Fact f{x, rel, y};
    return f != masked && f != masked_back;
  };

  // Forward reachability per level, then the number of completions to t from
  // each reachable node; sampling proportionally to completion counts is uniform
  // over whole instantiations.
  const std::size_t n = body.size();
  std::vector<std::vector<TokenId>> level(n + 1);
  level[0] = {h};
  for (std::size_t i = 0; i < n; ++i) {
    for (TokenId x : level[i]) {
      for (const Edge& e : graph.edges(x, body[i])) {
        if (usable(x, e.relation, e.target)) level[i + 1].push_back(e.target);
      }
    }
    std::sort(level[i + 1].begin(), level[i + 1].end());
    level[i + 1].erase(std::unique(level[i + 1].begin(), level[i + 1].end()), level[i + 1].end());
    if (level[i + 1].empty()) return std::nullopt;
  }
  if (!std::binary_search(level[n].begin(), level[n].end(), t)) return std::nullopt;

  std::vector<std::unordered_map<TokenId, double>> completions(n + 1);
  completions[n][t] = 1.0;
  for (std::size_t i = n; i-- > 0;) {
    for (TokenId x : level[i]) {
      double total = 0;
      for (const Edge& e : graph.edges(x, body[i])) {
        if (!usable(x, e.relation, e.target)) continue;
        auto it = completions[i + 1].find(e.target);
        if (it != completions[i + 1].end()) total += it->second;
      }
      if (total > 0) completions[i][x] = total;
    }
  }
  if (!completions[0].contains(h)) return std::nullopt;

  std::vector<TokenId> path;
  TokenId x = h;
  for (std::size_t i = 0; i < n; ++i) {
    const double total = completions[i].at(x);
    double pick = std::uniform_real_distribution<double>(0.0, total)(rng);
    TokenId chosen = -1;
    for (const Edge& e : graph.edges(x, body[i])) {
      if (!usable(x, e.relation, e.target)) continue;
      auto it = completions[i + 1].find(e.target);
      if (it == completions[i + 1].end()) continue;
      chosen = e.target;
      pick -= it->second;
      if (pick < 0) break;
    }
    path.push_back(body[i]);
    path.push_back(chosen);
    x = chosen;
  }
  return path;
}

void write_rules(const std::filesystem::path& path, std::span<const ChainRule> rules,
                 const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  for (const auto& r : rules) {
    out << vocab.token_of(r.head) << '\t';
    for (std::size_t i = 0; i < r.body.size(); ++i) {
      if (i) out << ',';
      out << vocab.token_of(r.body[i]);
    }
    out << '\t' << r.confidence << '\t' << r.support << '\n';
  }
}

std::vector<ChainRule> read_rules(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<ChainRule> rules;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != 4) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": expected 4 fields");
    }
    ChainRule rule;
    rule.head = vocab.require(fields[0]);
    std::stringstream body(fields[1]);
    while (std::getline(body, field, ',')) rule.body.push_back(vocab.require(field));
    try {
      rule.confidence = std::stod(fields[2]);
      rule.support = std::stoull(fields[3]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": bad number");
    }
    if (!vocab.is_relation(rule.head) || rule.body.empty() ||
        !std::all_of(rule.body.begin(), rule.body.end(), [&](TokenId t) { return vocab.is_relation(t); })) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": not a chain rule");
    }
    rules.push_back(std::move(rule));
  }
  return rules;
}

}  // namespace squire
