// SPDX-License-Identifier: Apache-2.0
//
// squire: command-line driver for rule mining, training, evaluation and
// single-query prediction.

#include <CLI11.hpp>
#include <json.hpp>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "run_config.hpp"
#include "squire/evaluator.hpp"
#include "squire/inference.hpp"
#include "squire/kg_store.hpp"
#include "squire/model.hpp"
#include "squire/rule_miner.hpp"
#include "squire/tensor.hpp"
#include "squire/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace squire::cli {
namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Configuration problems reported together; mapped to the usage exit code.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path data_dir_or_env(const std::string& given) {
  if (!given.empty()) return given;
  if (const char* env = std::getenv("SQUIRE_DATA")) return env;
  throw ConfigError("--data is required (or set SQUIRE_DATA)");
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

RunConfig load_run_config(const fs::path& path, std::size_t vocab_size) {
  std::vector<std::string> errors;
  RunConfig config = parse_run_config(read_json(path), vocab_size, errors);
  if (!errors.empty()) {
    std::string message = "invalid config " + path.string() + ":";
    for (const auto& e : errors) message += "\n  - " + e;
    throw ConfigError(message);
  }
  return config;
}

std::string path_string(const Vocabulary& vocab, TokenId head, const std::vector<TokenId>& tokens) {
  std::string out = vocab.token_of(head);
  for (TokenId t : tokens) {
    if (t == vocab.eos()) break;
    out += " " + vocab.token_of(t);
  }
  return out;
}

// ---------------------------------------------------------------- mine

struct MineArgs {
  std::string data;
  std::size_t max_body_len = 3;
  std::size_t min_support = 1;
  std::optional<double> threshold;
  std::string out;
  std::uint64_t seed = 0;
};

int run_mine(const MineArgs& args) {
  const KnowledgeGraph graph = load_dataset(data_dir_or_env(args.data));
  MinerOptions options;
  options.max_body_len = args.max_body_len;
  options.min_support = args.min_support;
  options.seed = args.seed;
  auto rules = mine_rules(graph, options);
  if (args.threshold) rules = select_golden_rules(rules, *args.threshold);
  write_rules(args.out, rules, graph.vocab());

  std::array<std::size_t, 10> histogram{};
  for (const auto& r : rules) {
    histogram[std::min<std::size_t>(9, static_cast<std::size_t>(r.confidence * 10))]++;
  }
  json summary{{"rules", rules.size()}, {"out", args.out}, {"confidence_histogram", json::array()}};
  for (std::size_t b = 0; b < histogram.size(); ++b) {
    summary["confidence_histogram"].push_back({{"lo", b / 10.0}, {"hi", (b + 1) / 10.0}, {"count", histogram[b]}});
  }
  std::cout << summary.dump(2) << '\n';
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string rules;
  std::string config;
  std::string out;
  bool no_iterative = false;
  bool resume = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

fs::path checkpoint_path(const fs::path& dir, std::size_t k) {
  return dir / ("checkpoint_" + std::to_string(k) + ".bin");
}
fs::path dataset_path(const fs::path& dir, std::size_t k) {
  return dir / ("dataset_" + std::to_string(k) + ".tsv");
}

/// Restores the last completed iteration recorded in out/state.json and drops
/// log records written after it.
ResumePoint restore(const fs::path& out, const KnowledgeGraph& graph, SquireModel<float>& model) {
  const json state = read_json(out / "state.json");
  ResumePoint point;
  point.completed_iterations = state.at("completed_iterations").get<std::size_t>();
  point.state.step = state.at("step").get<long>();
  point.state.epoch = state.at("epoch").get<std::size_t>();
  point.dataset.initial_size = state.at("initial_size").get<std::size_t>();
  point.dataset.pairs = read_pairs(dataset_path(out, point.completed_iterations), graph.vocab());
  load_checkpoint(model, checkpoint_path(out, point.completed_iterations));

  std::ifstream in(out / "log.jsonl");
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (json::parse(line).at("step").get<long>() <= point.state.step) kept += line + "\n";
  }
  write_text(out / "log.jsonl", kept);
  return point;
}

int run_train(const TrainArgs& args) {
  const KnowledgeGraph graph = load_dataset(data_dir_or_env(args.data));
  RunConfig config = load_run_config(args.config, graph.vocab().size());
  if (args.no_iterative) config.train.iterative = false;
  if (args.seed) config.train.seed = *args.seed;
  if (args.threads) config.train.threads = *args.threads;

  const fs::path out = args.out;
  fs::create_directories(out);
  const json resolved = to_json(config);
  if (args.resume) {
    if (read_json(out / "config.json") != resolved) {
      throw ConfigError("--resume: effective config differs from " + (out / "config.json").string());
    }
  } else {
    write_text(out / "config.json", resolved.dump(2) + "\n");
    fs::remove(out / "state.json");
  }
  if (!fs::exists(out / "state.json")) write_text(out / "log.jsonl", "");
  graph.vocab().dump(out / "vocab.txt");

  std::vector<ChainRule> rules;
  if (!args.rules.empty()) {
    rules = read_rules(args.rules, graph.vocab());
    if (config.train.rule_threshold) rules = select_golden_rules(rules, *config.train.rule_threshold);
  }
  const RuleIndex golden = index_rules(rules);

  SquireModel<float> model(config.model, config.train.seed);
  std::optional<ResumePoint> resume;
  if (args.resume && fs::exists(out / "state.json")) resume = restore(out, graph, model);

  std::ofstream log(out / "log.jsonl", std::ios::app);
  TrainState last;
  TrainCallbacks callbacks;
  callbacks.on_log = [&](const LogRecord& record) {
    log << to_json_line(record) << '\n';
    last = {record.step, record.epoch};
  };
  callbacks.on_iteration_end = [&](std::size_t k, const TrainingSet& dataset) {
    log.flush();
    save_checkpoint(model, checkpoint_path(out, k));
    write_pairs(dataset_path(out, k), dataset.pairs, graph.vocab());
    const json state{{"completed_iterations", k},
                     {"step", last.step},
                     {"epoch", last.epoch},
                     {"initial_size", dataset.initial_size},
                     {"pairs", dataset.pairs.size()}};
    write_text(out / "state.json", state.dump(2) + "\n");
    std::cerr << "iteration " << k << ": " << dataset.pairs.size() << " pairs, step " << last.step << '\n';
  };
  if (resume) last = resume->state;
  iterative_training(model, graph, golden, config.train, callbacks, resume ? &*resume : nullptr);
  return kOk;
}

// ---------------------------------------------------------------- eval / predict

struct ModelArgs {
  std::string data;
  std::string checkpoint;
  std::string config;
  std::size_t beam = 0;
  std::size_t threads = 1;
};

/// Loads the checkpoint into a model built from --config, defaulting to the
/// config.json written next to the checkpoint by `train`.
struct LoadedModel {
  KnowledgeGraph graph;
  RunConfig config;
  std::unique_ptr<SquireModel<float>> model;
};

LoadedModel load_model(const ModelArgs& args) {
  LoadedModel loaded;
  loaded.graph = load_dataset(data_dir_or_env(args.data));
  const fs::path config_path =
      args.config.empty() ? fs::path(args.checkpoint).parent_path() / "config.json" : fs::path(args.config);
  loaded.config = load_run_config(config_path, loaded.graph.vocab().size());
  loaded.model = std::make_unique<SquireModel<float>>(loaded.config.model, loaded.config.train.seed);
  load_checkpoint(*loaded.model, args.checkpoint);
  return loaded;
}

struct EvalArgs : ModelArgs {
  std::string split = "test";
  bool self_consistency = false;
  std::vector<std::string> constraints;
  std::string ranks_out;
};

int run_eval(const EvalArgs& args) {
  const LoadedModel loaded = load_model(args);
  const KnowledgeGraph& graph = loaded.graph;
  const auto& split = args.split == "valid" ? graph.valid() : graph.test();
  if (split.empty()) throw DataError("the " + args.split + " split is empty");

  std::map<std::string, FactSet> edge_sets;
  for (const auto& spec : args.constraints) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--constraints expects NAME=FILE, got '" + spec + "'");
    const std::string name = spec.substr(0, eq), file = spec.substr(eq + 1);
    if (file == "train") {
      edge_sets[name] = graph.train_facts();
      continue;
    }
    FactSet facts;
    std::ifstream in(file);
    if (!in) throw DataError("cannot open " + file);
    std::string line;
    std::size_t line_no = 0;
    const Vocabulary& v = graph.vocab();
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::istringstream fields(line);
      std::string h, r, t;
      if (!std::getline(fields, h, '\t') || !std::getline(fields, r, '\t') || !std::getline(fields, t)) {
        throw DataError(file + ":" + std::to_string(line_no) + ": expected head<TAB>relation<TAB>tail");
      }
      const TokenId hid = v.require(h), rid = v.require(r), tid = v.require(t);
      if (!v.is_entity(hid) || !v.is_relation(rid) || !v.is_entity(tid) || v.is_inverse(rid)) {
        throw DataError(file + ":" + std::to_string(line_no) + ": not an entity/relation/entity triple");
      }
      facts.insert(Fact{hid, rid, tid});
      facts.insert(Fact{tid, v.inverse(rid), hid});
    }
    edge_sets[name] = std::move(facts);
  }

  EvalOptions options;
  options.beam = {args.beam ? args.beam : loaded.config.train.beam_size, loaded.config.train.max_hops};
  options.self_consistency = args.self_consistency;
  options.threads = args.threads;
  const auto queries = evaluation_queries(graph, split);
  const auto outcomes = run_queries(*loaded.model, graph, queries, options);

  std::vector<std::size_t> ranks;
  for (const auto& o : outcomes) ranks.push_back(o.rank);
  const EvalReport report = compute_metrics(ranks);
  json out{{"split", args.split},
           {"queries", queries.size()},
           {"beam_size", options.beam.beam_size},
           {"ranking", args.self_consistency ? "self_consistency" : "max"},
           {"mrr", report.mrr},
           {"hits1", report.hits_at(1)},
           {"hits3", report.hits_at(3)},
           {"hits10", report.hits_at(10)}};
  if (!edge_sets.empty()) out["constraints"] = constraint_analysis(outcomes, edge_sets);
  std::cout << out.dump(2) << '\n';

  if (!args.ranks_out.empty()) {
    std::string tsv = "head\trelation\tgold\trank\tbest_path\n";
    const Vocabulary& v = graph.vocab();
    for (const auto& o : outcomes) {
      const RankedEntity* top = o.ranking.entries.empty() ? nullptr : &o.ranking.entries.front();
      tsv += v.token_of(o.query.head) + "\t" + v.token_of(o.query.relation) + "\t" + v.token_of(o.query.gold) +
             "\t" + std::to_string(o.rank) + "\t" + (top ? path_string(v, o.query.head, top->path) : "") + "\n";
    }
    write_text(args.ranks_out, tsv);
  }
  return kOk;
}

struct PredictArgs : ModelArgs {
  std::string head;
  std::string relation;
  std::size_t top = 10;
  bool self_consistency = false;
};

int run_predict(const PredictArgs& args) {
  const LoadedModel loaded = load_model(args);
  const Vocabulary& v = loaded.graph.vocab();
  const TokenId head = v.require(args.head);
  const TokenId relation = v.require(args.relation);
  if (!v.is_entity(head)) throw DataError("'" + args.head + "' is not an entity");
  if (!v.is_relation(relation)) throw DataError("'" + args.relation + "' is not a relation");

  const BeamOptions beam{args.beam ? args.beam : loaded.config.train.beam_size, loaded.config.train.max_hops};
  const auto hyps = beam_search(*loaded.model, v, Query{head, relation}, beam);
  const RankingResult ranking = args.self_consistency ? rank_self_consistency(hyps) : rank_max(hyps);
  json out = json::array();
  for (std::size_t i = 0; i < ranking.entries.size() && i < args.top; ++i) {
    const auto& e = ranking.entries[i];
    out.push_back({{"entity", v.token_of(e.entity)}, {"score", e.score}, {"path", path_string(v, head, e.path)}});
  }
  std::cout << out.dump(2) << '\n';
  return kOk;
}

void add_model_options(CLI::App* cmd, ModelArgs& args) {
  cmd->add_option("--data", args.data, "Dataset directory with train/valid/test.txt");
  cmd->add_option("--checkpoint", args.checkpoint, "Checkpoint written by train")->required()->check(CLI::ExistingFile);
  cmd->add_option("--config", args.config, "Run config (default: config.json beside the checkpoint)");
  cmd->add_option("--beam", args.beam, "Beam size (default: beam_size from the config)")->check(CLI::PositiveNumber);
  cmd->add_option("--threads", args.threads, "Worker threads")->check(CLI::PositiveNumber);
}

}  // namespace
}  // namespace squire::cli

int main(int argc, char** argv) {
  using namespace squire::cli;
  CLI::App app{"SQUIRE multi-hop knowledge graph reasoning"};
  app.require_subcommand(1);

  MineArgs mine;
  auto* mine_cmd = app.add_subcommand("mine", "Mine chain rules from the training split");
  mine_cmd->add_option("--data", mine.data, "Dataset directory");
  mine_cmd->add_option("--max-body-len", mine.max_body_len, "Longest rule body")->check(CLI::Range(1, 8));
  mine_cmd->add_option("--min-support", mine.min_support, "Minimum rule support")->check(CLI::PositiveNumber);
  mine_cmd->add_option("--threshold", mine.threshold, "Keep rules with confidence above this")
      ->check(CLI::Range(0.0, 1.0));
  mine_cmd->add_option("--out", mine.out, "Rule TSV to write")->required();
  mine_cmd->add_option("--seed", mine.seed, "Sampling seed");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model, optionally with iterative aggregation");
  train_cmd->add_option("--data", train.data, "Dataset directory");
  train_cmd->add_option("--rules", train.rules, "Rule TSV from mine")->check(CLI::ExistingFile);
  train_cmd->add_option("--config", train.config, "JSON run config")->required();
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_flag("--no-iterative", train.no_iterative, "Skip the aggregation rounds");
  train_cmd->add_flag("--resume", train.resume, "Continue from the last completed iteration in --out");
  train_cmd->add_option("--seed", train.seed, "Override the config seed");
  train_cmd->add_option("--threads", train.threads, "Override the config thread count")->check(CLI::PositiveNumber);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Filtered link-prediction metrics on a split");
  add_model_options(eval_cmd, eval);
  eval_cmd->add_option("--split", eval.split, "test or valid")->check(CLI::IsMember({"test", "valid"}));
  eval_cmd->add_flag("--self-consistency", eval.self_consistency, "Rank by summed path probability");
  eval_cmd->add_option("--constraints", eval.constraints, "NAME=FILE edge set (FILE may be 'train'), repeatable");
  eval_cmd->add_option("--ranks-out", eval.ranks_out, "Per-query TSV of ranks and best paths");

  PredictArgs predict;
  auto* predict_cmd = app.add_subcommand("predict", "Answer one (head, relation, ?) query");
  add_model_options(predict_cmd, predict);
  predict_cmd->add_option("--head", predict.head, "Head entity")->required();
  predict_cmd->add_option("--relation", predict.relation, "Relation token, e.g. r or r^-1")->required();
  predict_cmd->add_option("--top", predict.top, "Entities to print")->check(CLI::PositiveNumber);
  predict_cmd->add_flag("--self-consistency", predict.self_consistency, "Rank by summed path probability");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*mine_cmd) return run_mine(mine);
    if (*train_cmd) return run_train(train);
    if (*eval_cmd) return run_eval(eval);
    if (*predict_cmd) return run_predict(predict);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const squire::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const squire::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
