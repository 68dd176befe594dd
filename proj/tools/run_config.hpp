// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "squire/model.hpp"
#include "squire/trainer.hpp"

namespace squire::cli {

/// Model and training settings read from one flat JSON object.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Parses `doc` on top of the defaults. Every problem found (unknown keys,
/// wrong types, out-of-range values) is appended to `errors`.
RunConfig parse_run_config(const nlohmann::json& doc, std::size_t vocab_size, std::vector<std::string>& errors);

nlohmann::json to_json(const RunConfig& config);

}  // namespace squire::cli
