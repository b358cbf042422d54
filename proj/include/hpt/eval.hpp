// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "hpt/checkpoint.hpp"
#include "hpt/data.hpp"
#include "hpt/nn.hpp"

namespace hpt {

struct LinearEvalConfig {
  std::vector<double> lr_grid{0.3, 3.0, 30.0};
  std::size_t batch = 64;
  std::size_t steps = 500;
  double momentum = 0.9;
  /// Seeds minibatch order.
  std::uint64_t seed = 0;

  void validate() const;
};

struct FinetuneConfig {
  std::size_t budget = 100;
  std::vector<double> lrs{0.01, 0.001};
  /// Named step counts; the long one stands in for an epoch schedule over
  /// the budgeted labels.
  std::vector<std::pair<std::string, std::size_t>> schedules{{"short", 100}, {"long", 300}};
  std::size_t batch = 32;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  void validate() const;
};

struct GridCell {
  std::string label;
  double lr = 0.0;
  std::size_t steps = 0;
  double val_score = 0.0;
  /// Non-finite loss; never selected.
  bool diverged = false;
};

struct EvalReport {
  std::string mode;    // linear | finetune
  std::string metric;  // top1 | auroc
  std::vector<GridCell> grid;
  std::size_t selected = 0;
  double test_score = 0.0;
  std::uint64_t seed = 0;
  std::string checkpoint_hash;
  std::vector<std::string> budget_ids;
  std::vector<std::size_t> skipped_classes;
  /// Per-test-example argmax predictions of the selected head, in test order.
  std::vector<std::size_t> test_predictions;
  /// Scores of the selected head on the test rows.
  Tensor test_scores;

  const GridCell& selected_cell() const { return grid.at(selected); }
  nlohmann::ordered_json to_json() const;
};

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double top1(const Tensor& scores, const std::vector<std::size_t>& labels);

struct AurocResult {
  double value = 0.0;
  std::vector<std::size_t> skipped_classes;
};

/// Macro-averaged Mann-Whitney AUROC. targets are 0/1. Classes without both
/// positives and negatives are skipped; throws ContractError if none remain.
AurocResult auroc(const Tensor& scores, const Tensor& targets);

/// Eval-preprocessed, eval-mode, pre-head features of the given records.
Tensor extract_features(Encoder& enc, const Dataset& ds, const std::vector<std::size_t>& records);

/// Trained linear head. weight: classes x d, bias: classes.
struct LinearHead {
  Tensor weight;
  Tensor bias;
  bool diverged = false;

  Tensor scores(const Tensor& features) const;
};

/// SGD with momentum from a zero init, cross-entropy (sigmoid BCE when
/// multi_label), 10x decay at 1/3 and 2/3 of the steps.
LinearHead train_linear_head(const Tensor& features, const std::vector<std::vector<std::size_t>>& labels,
                             std::size_t classes, bool multi_label, double lr, const LinearEvalConfig& cfg);

/// Score of a head on features: top-1 for single-label, AUROC for multi-label.
double score_head(const LinearHead& head, const Tensor& features,
                  const std::vector<std::vector<std::size_t>>& labels, std::size_t classes, bool multi_label,
                  std::vector<std::size_t>* skipped = nullptr);

/// Linear probe on frozen features over the lr grid; best val lr reported on test.
EvalReport linear_eval(Encoder& enc, const Dataset& ds, const LinearEvalConfig& cfg);
EvalReport linear_eval(const Checkpoint& ckpt, const Dataset& ds, const LinearEvalConfig& cfg);

/// Same protocol on precomputed features (rows aligned with the splits given).
EvalReport linear_eval_features(const Tensor& train_x, const std::vector<std::vector<std::size_t>>& train_y,
                                const Tensor& val_x, const std::vector<std::vector<std::size_t>>& val_y,
                                const Tensor& test_x, const std::vector<std::vector<std::size_t>>& test_y,
                                std::size_t classes, bool multi_label, const LinearEvalConfig& cfg);

/// Budgeted labels, all parameters trainable, grid over lrs x schedules.
EvalReport finetune_semi(const Checkpoint& ckpt, const Dataset& ds, const FinetuneConfig& cfg, std::uint64_t seed);

}  // namespace hpt
