// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hpt/checkpoint.hpp"
#include "hpt/commands.hpp"
#include "hpt/config.hpp"
#include "hpt/error.hpp"
#include "test_util.hpp"

namespace hpt {
namespace {

using testing::read_file;
using testing::TempDir;

const char* kConfig = R"({
  "seed": 3,
  "output_dir": "out",
  "determinism": "strict",
  "encoder": {"input_size": 8, "stage_widths": [4, 6], "blocks_per_stage": 1, "embed_dim": 16, "proj_dim": 8},
  "moco": {"proj_dim": 8, "queue_size": 8, "momentum": 0.99, "lr": 0.03, "batch_size": 4},
  "datasets": {
    "base": {"synthetic": {"n": 16, "seed": 1, "domains": [{"name": "base", "class_count": 4, "image_size": 10}]}},
    "target": {"synthetic": {"n": 32, "seed": 2, "splits": {"train": 0.5, "val": 0.25, "test": 0.25},
               "domains": [{"name": "target", "shape_family": "strokes", "class_count": 4, "image_size": 10}]}}
  },
  "plan": {"plan_id": "B+T", "stages": [
    {"name": "base", "dataset": "base", "steps": 2},
    {"name": "target", "dataset": "target", "steps": 2}
  ]},
  "eval_dataset": "target",
  "linear_eval": {"steps": 10, "batch": 8},
  "finetune": {"budget": 8, "schedules": [{"name": "short", "steps": 2}, {"name": "long", "steps": 3}], "batch": 4},
  "robustness": {"target": "target", "steps": 2, "scratch_steps": 2},
  "select_source": {"candidates": ["base", "target"], "target": "target", "probe_steps": 1},
  "similarity": {"dataset": "target", "layer": "features"}
})";

class Cli : public ::testing::Test {
protected:
  void SetUp() override {
    std::ofstream(dir.path() / "run.json") << kConfig;
  }
  CommandOptions opts(const std::string& out) {
    CommandOptions o;
    o.config = dir.path() / "run.json";
    o.out = dir.path() / out;
    o.log = &log;
    return o;
  }
  TempDir dir{"cli"};
  std::ostringstream log;
};

TEST(Config, UnknownKeyRejected) {
  auto j = nlohmann::json::parse(kConfig);
  j["colour"] = 1;
  EXPECT_THROW(parse_config(j), ConfigError);
}

TEST(Config, BadValuesRejected) {
  auto j = nlohmann::json::parse(kConfig);
  j["moco"]["queue_size"] = 10;
  EXPECT_THROW(parse_config(j), ConfigError);
  j = nlohmann::json::parse(kConfig);
  j["determinism"] = "loose";
  EXPECT_THROW(parse_config(j), ConfigError);
  j = nlohmann::json::parse(kConfig);
  j["plan"]["stages"][0]["freeze"] = "all";
  EXPECT_THROW(parse_config(j), ConfigError);
  j = nlohmann::json::parse(kConfig);
  j["datasets"]["target"]["synthetic"]["domains"][0]["color_shift"] = -0.5;
  EXPECT_THROW(parse_config(j), ConfigError);
  j["datasets"]["target"]["synthetic"]["domains"][0]["color_shift"] = 0.2;
  EXPECT_NO_THROW(parse_config(j));
}

TEST(Config, HashIgnoresKeyOrderButNotValues) {
  const auto j = nlohmann::json::parse(kConfig);
  nlohmann::ordered_json reordered;
  for (auto it = j.rbegin(); it != j.rend(); ++it) reordered[it.key()] = *it;
  const RunConfig a = parse_config(j);
  const RunConfig b = parse_config(nlohmann::json::parse(reordered.dump()));
  EXPECT_EQ(config_hash(a), config_hash(b));
  auto j2 = j;
  j2["seed"] = 4;
  EXPECT_NE(config_hash(a), config_hash(parse_config(j2)));
  EXPECT_EQ(config_hash(a).size(), 16u);
  auto j3 = j;
  j3["output_dir"] = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(parse_config(j3)));
}

TEST(Config, ShippedConfigsParse) {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(HPT_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(e.path())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 2u);
}

TEST_F(Cli, MissingConfigIsExitTwo) {
  CommandOptions o = opts("x");
  o.config = dir.path() / "nope.json";
  EXPECT_EQ(cmd_pretrain(o), kExitConfig);
}

TEST_F(Cli, BadCheckpointIsExitThree) {
  std::ofstream(dir.path() / "bad.ckpt") << "not a checkpoint";
  EXPECT_EQ(cmd_eval(opts("e"), "linear", dir.path() / "bad.ckpt"), kExitData);
  EXPECT_EQ(cmd_eval(opts("e"), "linear", dir.path() / "missing.ckpt"), kExitData);
}

TEST_F(Cli, StrictRunsAreByteIdentical) {
  ASSERT_EQ(cmd_pretrain(opts("a")), kExitOk) << log.str();
  ASSERT_EQ(cmd_pretrain(opts("b")), kExitOk) << log.str();
  for (const char* f : {"summary.json", "metrics.jsonl", "checkpoints/0-base.ckpt", "checkpoints/1-target.ckpt"})
    EXPECT_EQ(read_file(dir.path() / "a" / f), read_file(dir.path() / "b" / f)) << f;
  CommandOptions other = opts("c");
  other.seed = 4;
  ASSERT_EQ(cmd_pretrain(other), kExitOk);
  EXPECT_NE(read_file(dir.path() / "a/checkpoints/1-target.ckpt"), read_file(dir.path() / "c/checkpoints/1-target.ckpt"));
}

TEST_F(Cli, EvalSimilarityAndReport) {
  ASSERT_EQ(cmd_pretrain(opts("p")), kExitOk) << log.str();
  const auto ckpt = dir.path() / "p/checkpoints/1-target.ckpt";
  const auto base = dir.path() / "p/checkpoints/0-base.ckpt";
  ASSERT_EQ(cmd_eval(opts("e"), "linear", ckpt), kExitOk) << log.str();
  ASSERT_EQ(cmd_eval(opts("e"), "finetune", ckpt), kExitOk) << log.str();
  const auto report = nlohmann::json::parse(read_file(dir.path() / "e/eval_linear.json"));
  EXPECT_EQ(report["mode"], "linear");
  EXPECT_EQ(read_file(dir.path() / "e/eval_linear.csv").substr(0, 35), "plan_id,stage,mode,metric,value,see");

  ASSERT_EQ(cmd_similarity(opts("s"), base, ckpt, std::nullopt, std::nullopt), kExitOk) << log.str();
  const auto sim = nlohmann::json::parse(read_file(dir.path() / "s/similarity.json"));
  EXPECT_GE(sim["error_iou"].get<double>(), 0.0);
  EXPECT_LE(sim["error_iou"].get<double>(), 1.0);

  ASSERT_EQ(cmd_report({dir.path() / "e"}, dir.path() / "report.csv", &log), kExitOk);
  const std::string table = read_file(dir.path() / "report.csv");
  EXPECT_EQ(table.substr(0, 7), "source,");
  EXPECT_NE(table.find("finetune"), std::string::npos);
}

TEST_F(Cli, SelectSourceAndRobustness) {
  ASSERT_EQ(cmd_select_source(opts("sel")), kExitOk) << log.str();
  const auto sel = nlohmann::json::parse(read_file(dir.path() / "sel/select_source.json"));
  EXPECT_EQ(sel["scores"].size(), 2u);
  ASSERT_EQ(cmd_robustness(opts("rob"), "augmentation"), kExitOk) << log.str();
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "rob/robustness_augmentation.csv"));
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(HPT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST_F(Cli, BinaryExitCodes) {
  EXPECT_EQ(run_binary(""), kExitConfig);
  EXPECT_EQ(run_binary("--help"), kExitOk);
  EXPECT_EQ(run_binary("pretrain --config " + (dir.path() / "nope.json").string()), kExitConfig);
  EXPECT_EQ(run_binary("eval --config " + (dir.path() / "run.json").string() + " --mode bogus --checkpoint x"),
            kExitConfig);
  std::ofstream(dir.path() / "bad.ckpt") << "HPTCKPT0";
  EXPECT_EQ(run_binary("eval --config " + (dir.path() / "run.json").string() + " --out " +
                       (dir.path() / "o").string() + " --checkpoint " + (dir.path() / "bad.ckpt").string()),
            kExitData);
}

}  // namespace
}  // namespace hpt
