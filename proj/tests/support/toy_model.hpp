// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <vector>

#include "squire/model.hpp"
#include "squire/optim.hpp"
#include "squire/path_sampler.hpp"

namespace squire::testing {

/// Small model fitted for `steps` full-batch Adam steps on `m` sampled pairs per
/// directed training fact of `graph`.
template <typename T>
std::unique_ptr<SquireModel<T>> train_toy_model(const KnowledgeGraph& graph, std::size_t steps,
                                                std::uint64_t seed = 1, std::size_t max_hops = 3) {
  ModelConfig config{.layers = 2, .dim = 16, .ff_dim = 32, .heads = 2, .dropout = 0.0,
                     .max_seq_len = 2 + 2 * max_hops + 1, .vocab_size = graph.vocab().size()};
  auto model = std::make_unique<SquireModel<T>>(config, seed);
  std::vector<SequenceExample> examples;
  Rng rng(seed);
  for (const Triple& t : graph.train()) {
    for (const Fact& f : {graph.forward_fact(t), graph.inverse_fact(t)}) {
      for (const auto& pair : make_training_pairs(graph, f, {}, 2, {.max_hops = max_hops}, rng)) {
        examples.push_back(make_example(pair));
      }
    }
  }
  auto params = model->parameters();
  for (std::size_t s = 0; s < steps; ++s) {
    Tape<T> tape;
    tape.backward(sequence_loss<T>(tape, *model, examples, T(0.75), false, nullptr));
    adam_step<T>(params, 5e-3);
  }
  return model;
}

}  // namespace squire::testing
