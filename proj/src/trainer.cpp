// SPDX-License-Identifier: Apache-2.0

#include "squire/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include "squire/optim.hpp"

namespace squire {

namespace {

// Disjoint rng stream ranges so that every consumer draws independent numbers.
constexpr std::uint64_t kInitialStream = 1ULL << 40;
constexpr std::uint64_t kAggregateStream = 2ULL << 40;
constexpr std::uint64_t kShuffleStream = 3ULL << 40;
constexpr std::uint64_t kMaskStream = 4ULL << 40;
constexpr std::uint64_t kDropoutStream = 5ULL << 40;
constexpr std::size_t kAggregateBatch = 32;

/// Runs fn(begin, end) over [0, n) in chunks of `chunk`, spread over `threads`
/// workers. Each index is processed exactly once; the first exception wins.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t chunk, std::size_t threads, Fn&& fn) {
  const std::size_t chunks = (n + chunk - 1) / chunk;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto worker = [&] {
    try {
      for (std::size_t c = next++; c < chunks; c = next++) fn(c * chunk, std::min(n, (c + 1) * chunk));
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = chunks;
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(chunks, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::vector<std::string> TrainConfig::validate() const {
  std::vector<std::string> errors;
  if (!(lr > 0.0)) errors.emplace_back("lr must be positive");
  if (!(smoothing > 0.0 && smoothing <= 1.0)) errors.emplace_back("smoothing must lie in (0, 1]");
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) errors.emplace_back("mask_prob must lie in [0, 1]");
  if (!(warmup_ratio > 0.0 && warmup_ratio < 1.0)) errors.emplace_back("warmup_ratio must lie in (0, 1)");
  if (max_hops == 0) errors.emplace_back("max_hops must be at least 1");
  if (pairs_per_triple == 0) errors.emplace_back("pairs_per_triple must be at least 1");
  if (batch_size == 0) errors.emplace_back("batch_size must be at least 1");
  if (beam_size == 0) errors.emplace_back("beam_size must be at least 1");
  if (rule_threshold && !(*rule_threshold >= 0.0 && *rule_threshold <= 1.0)) {
    errors.emplace_back("rule_threshold must lie in [0, 1]");
  }
  if (threads == 0) errors.emplace_back("threads must be at least 1");
  return errors;
}

std::vector<Fact> directed_train_facts(const KnowledgeGraph& graph) {
  std::vector<Fact> facts;
  facts.reserve(2 * graph.train().size());
  for (const Triple& t : graph.train()) {
    facts.push_back(graph.forward_fact(t));
    facts.push_back(graph.inverse_fact(t));
  }
  return facts;
}

TrainingSet build_initial_dataset(const KnowledgeGraph& graph, const RuleIndex& golden_rules,
                                  const TrainConfig& config) {
  const auto facts = directed_train_facts(graph);
  std::vector<std::vector<QueryPathPair>> per_fact(facts.size());
  parallel_chunks(facts.size(), 64, config.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng = derive_rng(config.seed, kInitialStream + i);
      per_fact[i] = make_training_pairs(graph, facts[i], golden_rules, config.pairs_per_triple,
                                        config.sampler(), rng);
    }
  });
  TrainingSet set;
  set.pairs.reserve(facts.size() * config.pairs_per_triple);
  for (auto& pairs : per_fact) std::move(pairs.begin(), pairs.end(), std::back_inserter(set.pairs));
  set.initial_size = set.pairs.size();
  return set;
}

std::string to_json_line(const LogRecord& record) {
  nlohmann::ordered_json j;
  j["step"] = record.step;
  j["epoch"] = record.epoch;
  j["iteration_k"] = record.iteration;
  j["loss"] = record.loss;
  j["lr"] = record.lr;
  if (record.valid_mrr) j["valid_mrr"] = *record.valid_mrr;
  return j.dump();
}

template <typename T>
std::vector<LogRecord> train_epochs(SquireModel<T>& model, const KnowledgeGraph& graph,
                                    const std::vector<QueryPathPair>& pairs, std::size_t epochs,
                                    std::size_t iteration, const TrainConfig& config, TrainState& state,
                                    const TrainCallbacks& callbacks) {
  std::vector<LogRecord> log;
  if (epochs == 0 || pairs.empty()) return log;
  const std::size_t batch_size = std::min(config.batch_size, pairs.size());
  const std::size_t steps_per_epoch = (pairs.size() + batch_size - 1) / batch_size;
  const auto total_steps = static_cast<long>(epochs * steps_per_epoch);
  auto params = model.parameters();
  for (auto* p : params) {
    p->zero_grad();
    p->reset_optimizer();
  }

  std::vector<EvalQuery> valid_queries;
  if (config.valid_every > 0) {
    valid_queries = evaluation_queries(graph, graph.valid());
    if (config.valid_queries > 0 && valid_queries.size() > config.valid_queries) {
      valid_queries.resize(config.valid_queries);
    }
  }
  EvalOptions valid_options;
  valid_options.beam = {config.beam_size, config.max_hops};
  valid_options.threads = config.threads;

  Rng shuffle_rng = derive_rng(config.seed, kShuffleStream + iteration);
  Rng mask_rng = derive_rng(config.seed, kMaskStream + iteration);
  Rng dropout_rng = derive_rng(config.seed, kDropoutStream + iteration);
  const auto& vocab = graph.vocab();
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<SequenceExample> batch;
  long local_step = 0;

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    ++state.epoch;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      const std::size_t end = std::min(order.size(), begin + batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) {
        const auto& pair = pairs[order[i]];
        batch.push_back(make_example(pair, mask_entities(pair, vocab, config.mask_prob, mask_rng)));
      }
      Tape<T> tape;
      Var loss = sequence_loss<T>(tape, model, batch, static_cast<T>(config.smoothing), true, &dropout_rng);
      const double loss_value = static_cast<double>(tape.value(loss)[0]);
      if (!std::isfinite(loss_value)) {
        throw NumericError("non-finite training loss at step " + std::to_string(state.step + 1));
      }
      tape.backward(loss);
      ++local_step;
      const double lr = lr_at(local_step, total_steps, config.warmup_ratio, config.lr);
      adam_step<T>(params, lr);
      ++state.step;

      LogRecord record{state.step, state.epoch, iteration, loss_value, lr, std::nullopt};
      if (config.valid_every > 0 && !valid_queries.empty() &&
          state.step % static_cast<long>(config.valid_every) == 0) {
        record.valid_mrr = evaluate(model, graph, valid_queries, valid_options).mrr;
      }
      if (callbacks.on_log) callbacks.on_log(record);
      log.push_back(record);
    }
  }
  return log;
}

template <typename T>
std::vector<QueryPathPair> aggregate_pairs(const SquireModel<T>& model, const KnowledgeGraph& graph,
                                           const RuleIndex& golden_rules, std::size_t k,
                                           const TrainConfig& config) {
  if (k < 2 || k > config.max_hops) throw std::invalid_argument("aggregation round out of range");
  const auto facts = directed_train_facts(graph);
  const std::size_t m = config.pairs_per_triple;
  const std::size_t width = std::max(config.beam_size, m);
  const TokenId eos = graph.vocab().eos();
  SamplerOptions continuation = config.sampler();
  continuation.max_hops = config.max_hops - k + 1;

  std::vector<std::vector<QueryPathPair>> per_fact(facts.size());
  parallel_chunks(facts.size(), kAggregateBatch, config.threads, [&](std::size_t begin, std::size_t end) {
    std::vector<Query> queries;
    for (std::size_t i = begin; i < end; ++i) queries.push_back({facts[i].head, facts[i].relation});
    const auto prefixes = beam_prefixes(model, graph.vocab(), queries, k - 1, width);
    for (std::size_t i = begin; i < end; ++i) {
      const Fact& f = facts[i];
      Rng rng = derive_rng(config.seed, kAggregateStream + (k << 32) + i);
      auto& out = per_fact[i];
      const auto& candidates = prefixes[i - begin];
      for (std::size_t slot = 0; slot < m && slot < candidates.size(); ++slot) {
        const Hypothesis& prefix = candidates[slot];
        const TokenId e = prefix.terminal_entity();
        std::vector<TokenId> path = prefix.tokens;
        if (e == f.tail) {
          path.push_back(eos);
        } else if (auto rest = random_path(graph, e, f.tail, continuation, rng)) {
          path.insert(path.end(), rest->begin(), rest->end());
        } else {
          continue;
        }
        out.push_back({f.head, f.relation, std::move(path), Provenance::kAggregated});
      }
      if (out.size() < m) {
        auto fresh = make_training_pairs(graph, f, golden_rules, m, config.sampler(), rng);
        fresh.resize(m - out.size());
        std::move(fresh.begin(), fresh.end(), std::back_inserter(out));
      }
    }
  });
  std::vector<QueryPathPair> pairs;
  pairs.reserve(facts.size() * m);
  for (auto& p : per_fact) std::move(p.begin(), p.end(), std::back_inserter(pairs));
  return pairs;
}

template <typename T>
TrainingSet iterative_training(SquireModel<T>& model, const KnowledgeGraph& graph,
                               const RuleIndex& golden_rules, const TrainConfig& config,
                               const TrainCallbacks& callbacks, const ResumePoint* resume) {
  if (auto errors = config.validate(); !errors.empty()) {
    throw std::invalid_argument("train config: " + errors.front());
  }
  TrainingSet dataset;
  TrainState state;
  std::size_t first_round = 1;
  if (resume && resume->completed_iterations > 0) {
    dataset = resume->dataset;
    state = resume->state;
    first_round = resume->completed_iterations + 1;
  }
  const std::size_t rounds = config.iterative ? config.max_hops : 1;
  for (std::size_t k = first_round; k <= rounds; ++k) {
    std::size_t epochs = config.epochs;
    if (k == 1) {
      dataset = build_initial_dataset(graph, golden_rules, config);
    } else {
      auto fresh = aggregate_pairs(model, graph, golden_rules, k, config);
      std::move(fresh.begin(), fresh.end(), std::back_inserter(dataset.pairs));
      epochs = (config.epochs + k - 1) / k;
    }
    train_epochs(model, graph, dataset.pairs, epochs, k, config, state, callbacks);
    if (callbacks.on_iteration_end) callbacks.on_iteration_end(k, dataset);
  }
  return dataset;
}

#define SQUIRE_INSTANTIATE(T)                                                                      \
  template std::vector<LogRecord> train_epochs<T>(SquireModel<T>&, const KnowledgeGraph&,          \
                                                  const std::vector<QueryPathPair>&, std::size_t,  \
                                                  std::size_t, const TrainConfig&, TrainState&,    \
                                                  const TrainCallbacks&);                          \
  template std::vector<QueryPathPair> aggregate_pairs<T>(const SquireModel<T>&,                    \
                                                         const KnowledgeGraph&, const RuleIndex&,  \
                                                         std::size_t, const TrainConfig&);         \
  template TrainingSet iterative_training<T>(SquireModel<T>&, const KnowledgeGraph&,               \
                                             const RuleIndex&, const TrainConfig&,                 \
                                             const TrainCallbacks&, const ResumePoint*);

SQUIRE_INSTANTIATE(float)
SQUIRE_INSTANTIATE(double)

#undef SQUIRE_INSTANTIATE

}  // namespace squire
