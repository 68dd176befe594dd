// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "squire/inference.hpp"
#include "squire/kg_store.hpp"
#include "squire/model.hpp"

namespace squire {

/// Rank of `gold` among candidate entities after dropping every other entity e
/// with (query.head, query.relation, e) known true. Entities with a score equal
/// to gold's are placed ahead of it. An unranked gold gets `num_entities`.
std::size_t filtered_rank(const RankingResult& ranking, Query query, TokenId gold,
                          const FactSet& known_true, std::size_t num_entities);

struct EvalReport {
  double mrr = 0.0;
  std::map<std::size_t, double> hits;  // N -> Hits@N for N in {1, 3, 10}
  std::vector<std::size_t> ranks;
  std::map<std::string, double> constraints;  // name -> Hits@1

  double hits_at(std::size_t n) const { return hits.at(n); }
};

/// MRR and Hits@{1,3,10}; throws std::invalid_argument on an empty list.
EvalReport compute_metrics(const std::vector<std::size_t>& ranks);

/// A link-prediction query with its gold answer.
struct EvalQuery {
  TokenId head = 0;
  TokenId relation = 0;
  TokenId gold = 0;
};

/// Tail queries (h, r, ?) and head queries as (t, r^-1, ?) for every triple.
std::vector<EvalQuery> evaluation_queries(const KnowledgeGraph& graph, const std::vector<Triple>& split);

struct EvalOptions {
  BeamOptions beam;
  bool self_consistency = false;
  std::size_t threads = 1;
  /// Queries decoded together in one batched beam search.
  std::size_t query_batch = 32;
};

struct QueryOutcome {
  EvalQuery query;
  std::size_t rank = 0;
  RankingResult ranking;
  std::vector<Hypothesis> hypotheses;
};

/// Beam search plus filtered ranking for every query. Results are in query
/// order and do not depend on the thread count.
template <typename T>
std::vector<QueryOutcome> run_queries(const SquireModel<T>& model, const KnowledgeGraph& graph,
                                      const std::vector<EvalQuery>& queries, const EvalOptions& options);

template <typename T>
EvalReport evaluate(const SquireModel<T>& model, const KnowledgeGraph& graph,
                    const std::vector<EvalQuery>& queries, const EvalOptions& options);

/// Constrained Hits@1 per named edge set. A query counts as a hit under a
/// constraint when its unconstrained filtered top-1 entity is the gold entity
/// and the best-scoring generated path reaching it uses only edges of the set.
/// The "unconstrained" entry is always present.
std::map<std::string, double> constraint_analysis(const std::vector<QueryOutcome>& outcomes,
                                                  const std::map<std::string, FactSet>& edge_sets);

/// Constraint edge set from a triple list: each triple in both directions.
FactSet edge_set(const KnowledgeGraph& graph, const std::vector<Triple>& triples);

}  // namespace squire
