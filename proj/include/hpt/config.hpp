// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hpt/augment.hpp"
#include "hpt/data.hpp"
#include "hpt/eval.hpp"
#include "hpt/moco.hpp"
#include "hpt/nn.hpp"
#include "hpt/pretrain.hpp"

namespace hpt {

enum class Determinism { strict, fast };

std::string to_string(Determinism d);
Determinism determinism_from_string(const std::string& s);

/// Where a dataset comes from: a manifest on disk, or a synthetic domain.
struct DatasetRef {
  std::string name;
  std::filesystem::path manifest;  // empty for synthetic
  std::size_t class_count = 0;
  bool multi_label = false;
  /// Synthetic: one or more domains, n images split over them, merged.
  std::vector<DomainSpec> domains;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  SplitFractions splits;
};

struct StageSpec {
  std::string name;
  std::string dataset;
  std::size_t steps = 0;
  FreezePolicy freeze = FreezePolicy::none;
  std::vector<std::string> remove_augmentations;
  /// Subsample the stage's train split to this fraction first.
  double fraction = 1.0;
  MoCoOverrides overrides;
};

struct PlanSpec {
  std::string plan_id = "plan";
  /// "fresh" or a checkpoint path.
  std::string init = "fresh";
  std::vector<StageSpec> stages;
};

struct RobustnessSpec {
  std::string base_checkpoint;  // empty: pretrain a base from the plan's first stage
  std::string target;
  std::size_t steps = 500;
  std::vector<std::string> removal_order{"Grayscale", "ColorJitter", "RandomHorizontalFlip", "GaussianBlur"};
  std::vector<double> fractions{0.01, 0.1, 0.25, 1.0};
  /// Scratch budget at fractions >= 0.25; smaller fractions get a tenth.
  std::size_t scratch_steps = 500;
};

struct SelectSourceSpec {
  std::string base_checkpoint;
  std::vector<std::string> candidates;
  std::string target;
  std::size_t probe_steps = 500;
};

struct SimilaritySpec {
  std::string dataset;
  std::string layer = "features";  // features | head
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  EncoderConfig encoder;
  MoCoConfig moco;
  EngineFlags flags;
  Determinism determinism = Determinism::strict;
  std::map<std::string, DatasetRef> datasets;
  PlanSpec plan;
  LinearEvalConfig linear_eval;
  FinetuneConfig finetune;
  std::string eval_dataset;
  RobustnessSpec robustness;
  SelectSourceSpec select_source;
  SimilaritySpec similarity;
  /// Directory relative paths resolve against (the config file's directory).
  std::filesystem::path base_dir = ".";
};

/// Parses a JSON config. Unknown top-level keys are rejected. Throws ConfigError.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

/// Sorted-key JSON of every field. canonical_text drops output_dir; the
/// config hash is FNV-1a over that text.
nlohmann::json to_json(const RunConfig& c);
std::string canonical_text(const RunConfig& c);
std::string config_hash(const RunConfig& c);

/// Materializes a named dataset (synthetic generation or manifest load).
Dataset resolve_dataset(const RunConfig& c, const std::string& name);

}  // namespace hpt
