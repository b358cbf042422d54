// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "hpt/config.hpp"
#include "hpt/eval.hpp"
#include "hpt/pretrain.hpp"

namespace hpt {

/// One stage of pretraining from init on data, then a linear probe on
/// eval_data. Returns the probe's test score.
double pretrain_and_probe(const std::variant<FreshInit, Checkpoint>& init, const Dataset& data, std::size_t steps,
                          FreezePolicy freeze, const Policy& policy, const Dataset& eval_data,
                          const RunOptions& opts, const LinearEvalConfig& eval);

struct SweepRow {
  std::string setting;   // policy label or fraction
  std::string strategy;  // HPT | HPT-BN | scratch
  std::string metric;
  double value = 0.0;
};

/// Policy labels for removing the first k names of order, k = 0 .. |order|.
std::vector<std::pair<std::string, Policy>> removal_levels(const Policy& full, const std::vector<std::string>& order);

/// Every removal level x {HPT (base -> target), scratch (target only)}.
std::vector<SweepRow> augmentation_sweep(const Checkpoint& base, const Dataset& target, const RobustnessSpec& spec,
                                         const RunOptions& opts, const LinearEvalConfig& eval);

/// Every fraction x {HPT, HPT-BN, scratch}. HPT arms always run spec.steps;
/// scratch runs spec.scratch_steps, a tenth of that below 25 % of the data.
std::vector<SweepRow> fraction_sweep(const Checkpoint& base, const Dataset& target, const RobustnessSpec& spec,
                                     const RunOptions& opts, const LinearEvalConfig& eval);

/// Header: <setting_column>,strategy,metric,value,seed,config_hash.
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& setting_column, std::uint64_t seed,
                     const std::string& config_hash, const std::filesystem::path& path);

/// Formats a double the same way on every run (shortest round-trip form).
std::string format_number(double v);

}  // namespace hpt
