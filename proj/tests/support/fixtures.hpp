// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "squire/kg_store.hpp"

namespace squire::testing {

/// Four-triple toy graph: A-r1->B, B-r2->C, A-r->C, D-r1->B.
KnowledgeGraph fixture_graph(const std::vector<std::string>& valid = {},
                             const std::vector<std::string>& test = {});

/// Builds a graph from "h r t" strings, one per triple.
KnowledgeGraph graph_from(const std::vector<std::string>& train, const std::vector<std::string>& valid = {},
                          const std::vector<std::string>& test = {});

TokenId tok(const KnowledgeGraph& graph, const std::string& name);
std::vector<TokenId> toks(const KnowledgeGraph& graph, const std::vector<std::string>& names);

/// Synthetic composition task: r1 and r2 map every entity to one random
/// successor each, r = r2 . r1 (x -r-> f2(f1(x))). A fraction of the r edges is
/// held out as test. Optional label noise adds uniformly random extra edges to
/// the training split.
struct SyntheticOptions {
  std::size_t entities = 200;
  double holdout = 0.3;
  double noise = 0.0;
  /// Fraction of the r1/r2 edges kept for training (1 keeps all of them).
  double keep_fraction = 1.0;
  /// Entities are grouped into consecutive blocks of this size and r1, r2 map
  /// every member of a block to the same random successor. With 1 the maps are
  /// independent per entity.
  std::size_t cluster_size = 1;
  std::uint64_t seed = 7;
};

struct SyntheticTask {
  KnowledgeGraph graph;
  /// Every edge of the complete composition graph (before subsampling and
  /// without noise), in both directions.
  FactSet full_edges;
  std::vector<std::string> train, test;
};

SyntheticTask make_synthetic(const SyntheticOptions& options);

}  // namespace squire::testing
