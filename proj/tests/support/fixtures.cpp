// SPDX-License-Identifier: Apache-2.0

#include "support/fixtures.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <tuple>

#include "squire/rng.hpp"

namespace squire::testing {

namespace {

std::string as_tsv(const std::vector<std::string>& triples) {
  std::string out;
  for (const auto& t : triples) {
    std::istringstream in(t);
    std::string h, r, tail;
    in >> h >> r >> tail;
    out += h + "\t" + r + "\t" + tail + "\n";
  }
  return out;
}

}  // namespace

KnowledgeGraph graph_from(const std::vector<std::string>& train, const std::vector<std::string>& valid,
                          const std::vector<std::string>& test) {
  NameTable names;
  auto tr = parse_triples(as_tsv(train), names);
  auto va = parse_triples(as_tsv(valid), names);
  auto te = parse_triples(as_tsv(test), names);
  return build_graph(std::move(names), std::move(tr), std::move(va), std::move(te));
}

KnowledgeGraph fixture_graph(const std::vector<std::string>& valid, const std::vector<std::string>& test) {
  return graph_from({"A r1 B", "B r2 C", "A r C", "D r1 B"}, valid, test);
}

TokenId tok(const KnowledgeGraph& graph, const std::string& name) { return graph.vocab().require(name); }

std::vector<TokenId> toks(const KnowledgeGraph& graph, const std::vector<std::string>& names) {
  std::vector<TokenId> out;
  for (const auto& n : names) out.push_back(tok(graph, n));
  return out;
}

SyntheticTask make_synthetic(const SyntheticOptions& options) {
  Rng rng = derive_rng(options.seed, 0);
  const std::size_t n = options.entities;
  const auto name = [](std::size_t i) { return "e" + std::to_string(i); };
  std::vector<std::size_t> f1(n), f2(n);
  const std::size_t block = std::max<std::size_t>(1, options.cluster_size);
  for (std::size_t x = 0; x < n; ++x) f1[x] = x % block == 0 ? uniform_index(rng, n) : f1[x - 1];
  for (std::size_t x = 0; x < n; ++x) f2[x] = x % block == 0 ? uniform_index(rng, n) : f2[x - 1];

  using Edge3 = std::tuple<std::size_t, std::string, std::size_t>;
  std::vector<Edge3> base, composed;
  for (std::size_t x = 0; x < n; ++x) {
    base.emplace_back(x, "r1", f1[x]);
    base.emplace_back(x, "r2", f2[x]);
    composed.emplace_back(x, "r", f2[f1[x]]);
  }
  std::shuffle(composed.begin(), composed.end(), rng);
  const auto held = static_cast<std::size_t>(options.holdout * static_cast<double>(composed.size()) + 0.5);
  std::set<Edge3> all(base.begin(), base.end());
  all.insert(composed.begin(), composed.end());

  std::vector<Edge3> train_edges;
  for (const auto& e : base) {
    if (std::uniform_real_distribution<double>(0, 1)(rng) < options.keep_fraction) train_edges.push_back(e);
  }
  train_edges.insert(train_edges.end(), composed.begin() + static_cast<std::ptrdiff_t>(held), composed.end());
  const std::vector<Edge3> test_edges(composed.begin(), composed.begin() + static_cast<std::ptrdiff_t>(held));

  const auto noise = static_cast<std::size_t>(options.noise * static_cast<double>(train_edges.size()) + 0.5);
  std::set<Edge3> used(all);
  static const char* kRelations[] = {"r1", "r2", "r"};
  for (std::size_t added = 0; added < noise;) {
    Edge3 e{uniform_index(rng, n), kRelations[uniform_index(rng, 3)], uniform_index(rng, n)};
    if (!used.insert(e).second) continue;
    train_edges.push_back(e);
    ++added;
  }

  SyntheticTask task;
  const auto fmt = [&](const Edge3& e) {
    return name(std::get<0>(e)) + " " + std::get<1>(e) + " " + name(std::get<2>(e));
  };
  for (const auto& e : train_edges) task.train.push_back(fmt(e));
  for (const auto& e : test_edges) task.test.push_back(fmt(e));
  task.graph = graph_from(task.train, {}, task.test);
  const auto& vocab = task.graph.vocab();
  for (const auto& [h, r, t] : all) {
    const auto hid = vocab.id_of(name(h));
    const auto tid = vocab.id_of(name(t));
    const auto rid = vocab.id_of(r);
    if (!hid || !tid || !rid) continue;
    task.full_edges.insert({*hid, *rid, *tid});
    task.full_edges.insert({*tid, vocab.inverse(*rid), *hid});
  }
  return task;
}

}  // namespace squire::testing
