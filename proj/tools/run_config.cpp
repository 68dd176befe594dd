// SPDX-License-Identifier: Apache-2.0

#include "run_config.hpp"

#include <functional>
#include <map>

namespace squire::cli {
namespace {

using nlohmann::json;

template <typename T>
std::function<void(const json&)> field(T& target) {
  return [&target](const json& value) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!value.is_boolean()) throw std::invalid_argument("expected a boolean");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!value.is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
    } else {
      if (!value.is_number()) throw std::invalid_argument("expected a number");
    }
    target = value.get<T>();
  };
}

}  // namespace

RunConfig parse_run_config(const json& doc, std::size_t vocab_size, std::vector<std::string>& errors) {
  RunConfig config;
  config.model.vocab_size = vocab_size;
  if (!doc.is_object()) {
    errors.emplace_back("config must be a JSON object");
    return config;
  }
  ModelConfig& m = config.model;
  TrainConfig& t = config.train;
  const std::map<std::string, std::function<void(const json&)>> fields{
      {"layers", field(m.layers)},
      {"dim", field(m.dim)},
      {"ff_dim", field(m.ff_dim)},
      {"heads", field(m.heads)},
      {"dropout", field(m.dropout)},
      {"activation",
       [&m](const json& v) {
         if (v == "gelu") {
           m.activation = Activation::kGelu;
         } else if (v == "relu") {
           m.activation = Activation::kRelu;
         } else {
           throw std::invalid_argument("expected \"gelu\" or \"relu\"");
         }
       }},
      {"lr", field(t.lr)},
      {"smoothing", field(t.smoothing)},
      {"mask_prob", field(t.mask_prob)},
      {"warmup_ratio", field(t.warmup_ratio)},
      {"epochs", field(t.epochs)},
      {"max_hops", field(t.max_hops)},
      {"pairs_per_triple", field(t.pairs_per_triple)},
      {"batch_size", field(t.batch_size)},
      {"beam_size", field(t.beam_size)},
      {"rule_threshold",
       [&t](const json& v) {
         if (v.is_null()) {
           t.rule_threshold.reset();
         } else if (v.is_number()) {
           t.rule_threshold = v.get<double>();
         } else {
           throw std::invalid_argument("expected a number or null");
         }
       }},
      {"seed", field(t.seed)},
      {"iterative", field(t.iterative)},
      {"threads", field(t.threads)},
      {"valid_every", field(t.valid_every)},
      {"valid_queries", field(t.valid_queries)},
  };
  for (const auto& [key, value] : doc.items()) {
    const auto it = fields.find(key);
    if (it == fields.end()) {
      errors.push_back("unknown key '" + key + "'");
      continue;
    }
    try {
      it->second(value);
    } catch (const std::exception& e) {
      errors.push_back(key + ": " + e.what());
    }
  }
  m.max_seq_len = 2 * t.max_hops + 3;
  for (auto& e : m.validate(t.max_hops)) errors.push_back(std::move(e));
  for (auto& e : t.validate()) errors.push_back(std::move(e));
  return config;
}

nlohmann::json to_json(const RunConfig& config) {
  const ModelConfig& m = config.model;
  const TrainConfig& t = config.train;
  json out{{"layers", m.layers},
           {"dim", m.dim},
           {"ff_dim", m.ff_dim},
           {"heads", m.heads},
           {"dropout", m.dropout},
           {"activation", m.activation == Activation::kGelu ? "gelu" : "relu"},
           {"lr", t.lr},
           {"smoothing", t.smoothing},
           {"mask_prob", t.mask_prob},
           {"warmup_ratio", t.warmup_ratio},
           {"epochs", t.epochs},
           {"max_hops", t.max_hops},
           {"pairs_per_triple", t.pairs_per_triple},
           {"batch_size", t.batch_size},
           {"beam_size", t.beam_size},
           {"rule_threshold", nullptr},
           {"seed", t.seed},
           {"iterative", t.iterative},
           {"threads", t.threads},
           {"valid_every", t.valid_every},
           {"valid_queries", t.valid_queries}};
  if (t.rule_threshold) out["rule_threshold"] = *t.rule_threshold;
  return out;
}

}  // namespace squire::cli
