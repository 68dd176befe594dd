// SPDX-License-Identifier: Apache-2.0

#include "squire/evaluator.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace squire {

std::size_t filtered_rank(const RankingResult& ranking, Query query, TokenId gold,
                          const FactSet& known_true, std::size_t num_entities) {
  const auto gold_score = ranking.score_of(gold);
  if (!gold_score) return num_entities;
  std::size_t rank = 1;
  for (const auto& e : ranking.entries) {
    if (e.entity == gold || e.score < *gold_score) continue;
    if (known_true.contains(Fact{query.head, query.relation, e.entity})) continue;
    ++rank;
  }
  return rank;
}

EvalReport compute_metrics(const std::vector<std::size_t>& ranks) {
  if (ranks.empty()) throw std::invalid_argument("compute_metrics: no ranks");
  EvalReport report;
  report.ranks = ranks;
  double reciprocal = 0.0;
  std::size_t within[3] = {0, 0, 0};
  constexpr std::size_t kCutoffs[3] = {1, 3, 10};
  for (std::size_t r : ranks) {
    if (r == 0) throw std::invalid_argument("compute_metrics: ranks start at 1");
    reciprocal += 1.0 / static_cast<double>(r);
    for (int i = 0; i < 3; ++i) within[i] += r <= kCutoffs[i] ? 1 : 0;
  }
  const auto n = static_cast<double>(ranks.size());
  report.mrr = reciprocal / n;
  for (int i = 0; i < 3; ++i) report.hits[kCutoffs[i]] = static_cast<double>(within[i]) / n;
  return report;
}

std::vector<EvalQuery> evaluation_queries(const KnowledgeGraph& graph, const std::vector<Triple>& split) {
  std::vector<EvalQuery> queries;
  queries.reserve(2 * split.size());
  for (const Triple& t : split) {
    const Fact f = graph.forward_fact(t);
    const Fact b = graph.inverse_fact(t);
    queries.push_back({f.head, f.relation, f.tail});
    queries.push_back({b.head, b.relation, b.tail});
  }
  return queries;
}

template <typename T>
std::vector<QueryOutcome> run_queries(const SquireModel<T>& model, const KnowledgeGraph& graph,
                                      const std::vector<EvalQuery>& queries, const EvalOptions& options) {
  std::vector<QueryOutcome> outcomes(queries.size());
  const std::size_t batch = std::max<std::size_t>(1, options.query_batch);
  const std::size_t num_batches = (queries.size() + batch - 1) / batch;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  const auto worker = [&] {
    try {
      for (std::size_t b = next++; b < num_batches; b = next++) {
        const std::size_t begin = b * batch;
        const std::size_t end = std::min(queries.size(), begin + batch);
        std::vector<Query> chunk;
        for (std::size_t i = begin; i < end; ++i) chunk.push_back({queries[i].head, queries[i].relation});
        auto hyps = beam_search(model, graph.vocab(), chunk, options.beam);
        for (std::size_t i = begin; i < end; ++i) {
          auto& out = outcomes[i];
          out.query = queries[i];
          out.hypotheses = std::move(hyps[i - begin]);
          out.ranking = options.self_consistency ? rank_self_consistency(out.hypotheses)
                                                 : rank_max(out.hypotheses);
          out.rank = filtered_rank(out.ranking, chunk[i - begin], queries[i].gold, graph.known_true(),
                                   graph.num_entities());
        }
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = num_batches;
    }
  };

  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(num_batches, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return outcomes;
}

template <typename T>
EvalReport evaluate(const SquireModel<T>& model, const KnowledgeGraph& graph,
                    const std::vector<EvalQuery>& queries, const EvalOptions& options) {
  const auto outcomes = run_queries(model, graph, queries, options);
  std::vector<std::size_t> ranks;
  ranks.reserve(outcomes.size());
  for (const auto& o : outcomes) ranks.push_back(o.rank);
  return compute_metrics(ranks);
}

std::map<std::string, double> constraint_analysis(const std::vector<QueryOutcome>& outcomes,
                                                  const std::map<std::string, FactSet>& edge_sets) {
  std::map<std::string, double> result;
  if (outcomes.empty()) return result;
  const auto n = static_cast<double>(outcomes.size());
  std::size_t unconstrained = 0;
  for (const auto& o : outcomes) unconstrained += o.rank == 1 ? 1 : 0;
  result["unconstrained"] = static_cast<double>(unconstrained) / n;
  for (const auto& [name, allowed] : edge_sets) {
    std::size_t hits = 0;
    for (const auto& o : outcomes) {
      if (o.rank != 1) continue;
      const RankedEntity* gold = o.ranking.find(o.query.gold);
      if (gold && path_within(gold->path, o.query.head, allowed)) ++hits;
    }
    result[name] = static_cast<double>(hits) / n;
  }
  return result;
}

FactSet edge_set(const KnowledgeGraph& graph, const std::vector<Triple>& triples) {
  FactSet out;
  for (const Triple& t : triples) {
    out.insert(graph.forward_fact(t));
    out.insert(graph.inverse_fact(t));
  }
  return out;
}

#define SQUIRE_INSTANTIATE(T)                                                                     \
  template std::vector<QueryOutcome> run_queries<T>(const SquireModel<T>&, const KnowledgeGraph&, \
                                                    const std::vector<EvalQuery>&,                \
                                                    const EvalOptions&);                          \
  template EvalReport evaluate<T>(const SquireModel<T>&, const KnowledgeGraph&,                   \
                                  const std::vector<EvalQuery>&, const EvalOptions&);

SQUIRE_INSTANTIATE(float)
SQUIRE_INSTANTIATE(double)

#undef SQUIRE_INSTANTIATE

}  // namespace squire
