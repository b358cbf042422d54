// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace hpt {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitDegenerate = 5,
};

struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::string> determinism;
  /// Diagnostics go here (stderr when null).
  std::ostream* log = nullptr;
};

/// Runs the configured plan. Writes checkpoints/<index>-<stage>.ckpt,
/// metrics.jsonl and summary.json under the output directory.
int cmd_pretrain(const CommandOptions& opts);

/// mode: linear | finetune. Writes eval_<mode>.json and eval_<mode>.csv.
int cmd_eval(const CommandOptions& opts, const std::string& mode, const std::filesystem::path& checkpoint);

/// sweep: augmentation | fraction. Writes robustness_<sweep>.csv.
int cmd_robustness(const CommandOptions& opts, const std::string& sweep);

/// Error IoU of linear heads and RV2 on the chosen layer (features | head).
/// dataset and layer default to the config's similarity section. Writes
/// similarity.json and the two activation matrices.
int cmd_similarity(const CommandOptions& opts, const std::filesystem::path& a, const std::filesystem::path& b,
                   const std::optional<std::string>& dataset, const std::optional<std::string>& layer);

/// Writes select_source.csv (candidate, score, winner) and select_source.json.
int cmd_select_source(const CommandOptions& opts);

/// Stacks CSV files into one table: a source column plus the union of their
/// columns in first-seen order. Writes out and prints an aligned text table.
int cmd_report(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out,
               std::ostream* log = nullptr);

}  // namespace hpt
