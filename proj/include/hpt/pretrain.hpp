// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "hpt/augment.hpp"
#include "hpt/checkpoint.hpp"
#include "hpt/data.hpp"
#include "hpt/moco.hpp"

namespace hpt {

/// Per-stage changes to the run's MoCo settings. total_steps always comes
/// from Stage::steps.
struct MoCoOverrides {
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> queue_size;
  std::optional<double> momentum;
  std::optional<double> temperature;
  std::optional<double> weight_decay;

  MoCoConfig apply(MoCoConfig base) const;
};

struct Stage {
  std::string name;
  /// Pretraining uses the train split only. Not owned.
  const Dataset* dataset = nullptr;
  std::size_t steps = 0;
  FreezePolicy freeze = FreezePolicy::none;
  Policy policy;
  MoCoOverrides overrides;
};

struct FreshInit {
  std::uint64_t seed = 0;
};

struct StagePlan {
  std::string plan_id;
  std::variant<FreshInit, Checkpoint> init = FreshInit{};
  std::vector<Stage> stages;
};

struct MetricEvent {
  std::size_t step = 0;
  std::string stage_id;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
  double wall_ms = 0.0;
};

struct RunOptions {
  EncoderConfig encoder;
  MoCoConfig moco;
  EngineFlags flags;
  /// Seeds view sampling and batch order. Fresh inits use FreshInit::seed for weights.
  std::uint64_t seed = 0;
  std::string config_hash;
  /// Called once per optimizer step.
  std::function<void(const MetricEvent&)> on_metric;
  /// Called after each stage with its 0-based index in the plan.
  std::function<void(std::size_t, const Checkpoint&)> on_stage_end;
};

struct PlanResult {
  Checkpoint initial;
  std::vector<Checkpoint> stages;
  const Checkpoint& final_checkpoint() const { return stages.empty() ? initial : stages.back(); }
};

/// Fresh checkpoint: q from seed, k a copy, empty history.
Checkpoint fresh_checkpoint(const RunOptions& opts, std::uint64_t seed);

/// Runs the stages in order, each continuing from the previous weights with
/// a fresh queue, zero velocity and its own cosine schedule. Stage randomness
/// is keyed by (seed, stage ordinal), and the ordinal continues from the
/// init checkpoint's history so split plans compose bit-exactly.
PlanResult run_plan(const StagePlan& plan, const RunOptions& opts);

/// Train-mode forward passes of the query encoder over the eval-preprocessed
/// train split without gradients; only its running statistics move. Throws ContractError for
/// passes < 1 and DataError for an empty dataset.
Checkpoint refresh_bn_stats(const Checkpoint& ckpt, const Dataset& dataset, std::size_t passes,
                            std::size_t batch_size = 64);

struct LinearEvalConfig;

struct Candidate {
  std::string name;
  const Dataset* dataset = nullptr;
};

struct SourceSelection {
  std::string winner;
  /// Candidate name and target val score, in input order.
  std::vector<std::pair<std::string, double>> scores;
  bool tie = false;
};

/// Probes each candidate with probe_steps of pretraining on top of base,
/// scores it by linear evaluation on the target's val split and returns the
/// best (ties go to the lexicographically smallest name).
SourceSelection select_source(const Checkpoint& base, const std::vector<Candidate>& candidates,
                              const Dataset& target, std::size_t probe_steps, const RunOptions& opts,
                              const LinearEvalConfig& probe_eval, const Policy& policy);

}  // namespace hpt
