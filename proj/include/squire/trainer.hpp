// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "squire/evaluator.hpp"
#include "squire/model.hpp"
#include "squire/path_sampler.hpp"
#include "squire/rule_miner.hpp"

namespace squire {

struct TrainConfig {
  double lr = 5e-4;
  double smoothing = 0.25;
  double mask_prob = 0.15;
  double warmup_ratio = 0.1;
  std::size_t epochs = 30;
  std::size_t max_hops = 3;
  std::size_t pairs_per_triple = 6;
  std::size_t batch_size = 256;
  std::size_t beam_size = 32;
  /// Golden-rule selection threshold; no rules are used when unset.
  std::optional<double> rule_threshold;
  std::uint64_t seed = 1;
  bool iterative = true;
  std::size_t threads = 1;
  /// Training-step interval between validation MRR measurements (0 = never).
  std::size_t valid_every = 0;
  /// Validation queries scored per measurement (0 = all).
  std::size_t valid_queries = 200;
  SamplerOptions sampler() const { return {max_hops, 10000, 32}; }

  /// Every violated constraint, empty when the config is usable.
  std::vector<std::string> validate() const;
};

struct TrainingSet {
  std::vector<QueryPathPair> pairs;
  std::size_t initial_size = 0;
};

/// Directed training facts: the forward and the inverse fact of each train
/// triple, in that order.
std::vector<Fact> directed_train_facts(const KnowledgeGraph& graph);

/// `pairs_per_triple` pairs for every directed training fact.
TrainingSet build_initial_dataset(const KnowledgeGraph& graph, const RuleIndex& golden_rules,
                                  const TrainConfig& config);

struct LogRecord {
  long step = 0;
  std::size_t epoch = 0;
  std::size_t iteration = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> valid_mrr;
};

std::string to_json_line(const LogRecord& record);

/// Observer hooks. Either may be empty.
struct TrainCallbacks {
  std::function<void(const LogRecord&)> on_log;
  std::function<void(std::size_t iteration, const TrainingSet& dataset)> on_iteration_end;
};

/// Global progress shared by successive train_epochs calls so that step numbers
/// keep increasing across iterations.
struct TrainState {
  long step = 0;
  std::size_t epoch = 0;
};

/// Trains for `epochs` epochs on shuffled mini-batches; the learning rate follows
/// a fresh warmup/decay schedule over exactly this call's step budget and the
/// Adam moments start from zero. Returns one record per step.
template <typename T>
std::vector<LogRecord> train_epochs(SquireModel<T>& model, const KnowledgeGraph& graph,
                                    const std::vector<QueryPathPair>& pairs, std::size_t epochs,
                                    std::size_t iteration, const TrainConfig& config, TrainState& state,
                                    const TrainCallbacks& callbacks = {});

/// One aggregation round for hop count k >= 2: m new pairs per directed fact,
/// built from the model's top-m prefixes with k-1 hops completed by a graph path
/// of at most N-k+1 hops. Prefix slots without a completion are filled with
/// freshly sampled full paths.
template <typename T>
std::vector<QueryPathPair> aggregate_pairs(const SquireModel<T>& model, const KnowledgeGraph& graph,
                                           const RuleIndex& golden_rules, std::size_t k,
                                           const TrainConfig& config);

/// Where an interrupted run left off: iterations 1..completed_iterations are done.
struct ResumePoint {
  std::size_t completed_iterations = 0;
  TrainingSet dataset;
  TrainState state;
};

/// Initial training for n epochs, then (when config.iterative) rounds k = 2..N
/// that aggregate new pairs and train for ceil(n/k) epochs on the enlarged set.
template <typename T>
TrainingSet iterative_training(SquireModel<T>& model, const KnowledgeGraph& graph,
                               const RuleIndex& golden_rules, const TrainConfig& config,
                               const TrainCallbacks& callbacks = {},
                               const ResumePoint* resume = nullptr);

}  // namespace squire
