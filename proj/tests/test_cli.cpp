// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / (std::string("squire_cli_") + info->name());
    fs::remove_all(root_);
    fs::create_directories(data());
    spit(data() / "train.txt", "A\tr1\tB\nB\tr2\tC\nA\tr\tC\nD\tr1\tB\n");
    spit(data() / "valid.txt", "");
    spit(data() / "test.txt", "D\tr\tC\n");
    spit(root_ / "config.json", json{{"layers", 1},
                                     {"dim", 8},
                                     {"ff_dim", 16},
                                     {"heads", 2},
                                     {"dropout", 0.0},
                                     {"lr", 0.01},
                                     {"epochs", 4},
                                     {"batch_size", 8},
                                     {"beam_size", 8},
                                     {"pairs_per_triple", 2},
                                     {"rule_threshold", 0.4},
                                     {"seed", 5}}
                                    .dump());
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path data() const { return root_ / "data"; }
  fs::path at(const std::string& name) const { return root_ / name; }

  Result run(const std::string& args) const {
    const fs::path out = root_ / "stdout.txt";
    const std::string cmd = std::string(SQUIRE_CLI) + " " + args + " > " + out.string() + " 2> " +
                            (root_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out)};
  }

  Result train(const std::string& out, const std::string& extra = "") const {
    return run("train --data " + data().string() + " --config " + at("config.json").string() + " --out " +
               at(out).string() + " " + extra);
  }

  fs::path root_;
};

TEST_F(Cli, MineWritesRulesAboveThreshold) {
  const auto r = run("mine --data " + data().string() + " --max-body-len 2 --min-support 1 --threshold 0.4 --out " +
                     at("rules.tsv").string());
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(slurp(at("rules.tsv")).find("r\tr1,r2\t0.5"), std::string::npos);
  EXPECT_GE(json::parse(r.out).at("rules").get<int>(), 1);

  ASSERT_EQ(run("mine --data " + data().string() + " --max-body-len 2 --threshold 0.6 --out " +
                at("strict.tsv").string())
                .code,
            0);
  EXPECT_EQ(slurp(at("strict.tsv")).find("r\tr1,r2\t"), std::string::npos);
}

TEST_F(Cli, MineUsageAndDataErrors) {
  EXPECT_EQ(run("mine --data " + data().string() + " --max-body-len 0 --out " + at("x.tsv").string()).code, 1);
  EXPECT_EQ(run("mine --data " + at("missing").string() + " --out " + at("x.tsv").string()).code, 2);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("bogus").code, 1);
}

TEST_F(Cli, MineOnEmptyTrainSplit) {
  spit(data() / "train.txt", "");
  spit(data() / "test.txt", "");
  ASSERT_EQ(run("mine --data " + data().string() + " --out " + at("empty.tsv").string()).code, 0);
  ASSERT_TRUE(fs::exists(at("empty.tsv")));
  EXPECT_TRUE(slurp(at("empty.tsv")).empty());
}

TEST_F(Cli, TrainWritesOneCheckpointPerIteration) {
  ASSERT_EQ(train("single", "--no-iterative").code, 0);
  EXPECT_TRUE(fs::exists(at("single/checkpoint_1.bin")));
  EXPECT_FALSE(fs::exists(at("single/checkpoint_2.bin")));

  ASSERT_EQ(train("iter").code, 0);
  for (int k = 1; k <= 3; ++k) EXPECT_TRUE(fs::exists(at("iter/checkpoint_" + std::to_string(k) + ".bin")));
  EXPECT_FALSE(fs::exists(at("iter/checkpoint_4.bin")));
  EXPECT_TRUE(fs::exists(at("iter/config.json")));

  std::ifstream log(at("iter/log.jsonl"));
  std::string line;
  long previous = 0;
  int records = 0;
  while (std::getline(log, line)) {
    const auto j = json::parse(line);
    for (const char* key : {"step", "epoch", "iteration_k", "loss", "lr"}) EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_GT(j.at("step").get<long>(), previous);
    previous = j.at("step").get<long>();
    ++records;
  }
  EXPECT_GT(records, 0);
}

TEST_F(Cli, SameSeedGivesIdenticalCheckpoint) {
  ASSERT_EQ(train("a", "--threads 1").code, 0);
  ASSERT_EQ(train("b", "--threads 1").code, 0);
  EXPECT_EQ(slurp(at("a/checkpoint_3.bin")), slurp(at("b/checkpoint_3.bin")));
  ASSERT_EQ(train("c", "--threads 1 --seed 6").code, 0);
  EXPECT_NE(slurp(at("a/checkpoint_3.bin")), slurp(at("c/checkpoint_3.bin")));
}

TEST_F(Cli, ResumeFromFirstIterationMatches) {
  ASSERT_EQ(run("mine --data " + data().string() + " --out " + at("rules.tsv").string()).code, 0);
  ASSERT_EQ(train("full", "--rules " + at("rules.tsv").string()).code, 0);
  const std::string final_checkpoint = slurp(at("full/checkpoint_3.bin"));
  const std::string full_log = slurp(at("full/log.jsonl"));

  long step = 0, epoch = 0;
  std::ifstream log(at("full/log.jsonl"));
  for (std::string line; std::getline(log, line);) {
    const auto j = json::parse(line);
    if (j.at("iteration_k") == 1) {
      step = j.at("step");
      epoch = j.at("epoch");
    }
  }
  std::size_t pairs = 0;
  std::ifstream dataset(at("full/dataset_1.tsv"));
  for (std::string line; std::getline(dataset, line);) pairs += !line.empty();
  spit(at("full/state.json"),
       json{{"completed_iterations", 1}, {"step", step}, {"epoch", epoch}, {"initial_size", pairs}}.dump());
  fs::remove(at("full/checkpoint_3.bin"));

  ASSERT_EQ(train("full", "--resume --rules " + at("rules.tsv").string()).code, 0);
  EXPECT_EQ(slurp(at("full/checkpoint_3.bin")), final_checkpoint);
  EXPECT_EQ(slurp(at("full/log.jsonl")), full_log);
}

TEST_F(Cli, ConfigErrorsAreListedTogether) {
  spit(at("config.json"), json{{"dim", 9}, {"heads", 2}, {"lr", -1}, {"colour", "red"}}.dump());
  const auto r = train("bad");
  EXPECT_EQ(r.code, 1);
  const std::string err = slurp(at("stderr.txt"));
  EXPECT_NE(err.find("divisible"), std::string::npos);
  EXPECT_NE(err.find("lr must be positive"), std::string::npos);
  EXPECT_NE(err.find("unknown key 'colour'"), std::string::npos);
}

TEST_F(Cli, EvalReportAndOptions) {
  ASSERT_EQ(train("m").code, 0);
  const std::string base = "eval --data " + data().string() + " --checkpoint " + at("m/checkpoint_3.bin").string();
  const auto plain = run(base + " --threads 1");
  ASSERT_EQ(plain.code, 0);
  const auto report = json::parse(plain.out);
  EXPECT_LE(report.at("hits1").get<double>(), report.at("hits3").get<double>());
  EXPECT_LE(report.at("hits3").get<double>(), report.at("hits10").get<double>());
  EXPECT_EQ(report.at("queries"), 2);

  const auto sc = json::parse(run(base + " --self-consistency").out);
  EXPECT_EQ(sc.at("queries"), report.at("queries"));
  EXPECT_EQ(sc.at("ranking"), "self_consistency");

  spit(at("small.tsv"), "A\tr1\tB\n");
  spit(at("large.tsv"), "A\tr1\tB\nB\tr2\tC\nD\tr1\tB\n");
  const auto constrained = run(base + " --constraints small=" + at("small.tsv").string() +
                               " --constraints large=" + at("large.tsv").string() + " --constraints train=train");
  ASSERT_EQ(constrained.code, 0);
  const auto hits = json::parse(constrained.out).at("constraints");
  EXPECT_LE(hits.at("small").get<double>(), hits.at("large").get<double>());
  EXPECT_LE(hits.at("large").get<double>(), hits.at("unconstrained").get<double>());

  EXPECT_EQ(run(base + " --constraints nofile").code, 1);
  spit(at("unknown.tsv"), "Z\tr1\tB\n");
  EXPECT_EQ(run(base + " --constraints x=" + at("unknown.tsv").string()).code, 2);
}

TEST_F(Cli, EvalRejectsMismatchedCheckpoint) {
  ASSERT_EQ(train("m", "--no-iterative").code, 0);
  spit(at("wide.json"), json{{"layers", 1}, {"dim", 16}, {"ff_dim", 16}, {"heads", 2}}.dump());
  const auto r = run("eval --data " + data().string() + " --checkpoint " + at("m/checkpoint_1.bin").string() +
                     " --config " + at("wide.json").string());
  EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, PredictListsEntitiesWithPaths) {
  ASSERT_EQ(train("m", "--no-iterative").code, 0);
  const auto r = run("predict --data " + data().string() + " --checkpoint " + at("m/checkpoint_1.bin").string() +
                     " --head A --relation r --top 3");
  ASSERT_EQ(r.code, 0);
  const auto list = json::parse(r.out);
  ASSERT_FALSE(list.empty());
  EXPECT_LE(list.size(), 3u);
  EXPECT_EQ(list[0].at("path").get<std::string>().rfind("A ", 0), 0u);
  EXPECT_EQ(run("predict --data " + data().string() + " --checkpoint " + at("m/checkpoint_1.bin").string() +
                " --head nobody --relation r")
                .code,
            2);
}

}  // namespace
