// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "CLI11.hpp"

#include "hpt/commands.hpp"

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::string determinism;
};

void add_common(CLI::App* app, Common& c, CLI::Option*& seed) {
  app->add_option("--config", c.config, "run config (JSON)")->required();
  seed = app->add_option("--seed", c.seed, "override the config seed");
  app->add_option("--out", c.out, "override the output directory");
  app->add_option("--determinism", c.determinism, "strict | fast")->check(CLI::IsMember({"strict", "fast"}));
}

hpt::CommandOptions to_options(const Common& c, const CLI::Option* seed) {
  hpt::CommandOptions o;
  o.config = c.config;
  if (seed->count()) o.seed = c.seed;
  if (!c.out.empty()) o.out = c.out;
  if (!c.determinism.empty()) o.determinism = c.determinism;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical pretraining lab"};
  app.require_subcommand(1);
  Common common;
  CLI::Option* seed = nullptr;

  auto* pretrain = app.add_subcommand("pretrain", "run the configured stage plan");
  add_common(pretrain, common, seed);

  std::string mode = "linear", ckpt;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, common, seed);
  eval->add_option("--mode", mode, "linear | finetune")->check(CLI::IsMember({"linear", "finetune"}));
  eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();

  std::string sweep;
  auto* robust = app.add_subcommand("robustness", "augmentation or fraction sweep");
  add_common(robust, common, seed);
  robust->add_option("--sweep", sweep, "augmentation | fraction")
      ->required()
      ->check(CLI::IsMember({"augmentation", "fraction"}));

  std::string ckpt_a, ckpt_b, dataset, layer;
  auto* simil = app.add_subcommand("similarity", "error IoU and RV2 of two checkpoints");
  add_common(simil, common, seed);
  simil->add_option("--a", ckpt_a, "first checkpoint")->required();
  simil->add_option("--b", ckpt_b, "second checkpoint")->required();
  simil->add_option("--dataset", dataset, "dataset name from the config");
  simil->add_option("--layer", layer, "features | head")->check(CLI::IsMember({"features", "head"}));

  auto* select = app.add_subcommand("select-source", "probe candidate sources on the target");
  add_common(select, common, seed);

  std::vector<std::string> inputs;
  std::string report_out = "report.csv";
  auto* report = app.add_subcommand("report", "stack CSV outputs into one table");
  report->add_option("inputs", inputs, "CSV files or directories")->required();
  report->add_option("--out", report_out, "combined CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : hpt::kExitConfig;
  }

  if (*report) {
    std::vector<std::filesystem::path> paths(inputs.begin(), inputs.end());
    return hpt::cmd_report(paths, report_out, &std::cout);
  }
  const hpt::CommandOptions opts = to_options(common, seed);
  if (*pretrain) return hpt::cmd_pretrain(opts);
  if (*eval) return hpt::cmd_eval(opts, mode, ckpt);
  if (*robust) return hpt::cmd_robustness(opts, sweep);
  if (*simil)
    return hpt::cmd_similarity(opts, ckpt_a, ckpt_b, dataset.empty() ? std::nullopt : std::optional(dataset),
                               layer.empty() ? std::nullopt : std::optional(layer));
  return hpt::cmd_select_source(opts);
}
