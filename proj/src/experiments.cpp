// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "hpt/experiments.hpp"

#include <fstream>

#include "hpt/error.hpp"

namespace hpt {

double pretrain_and_probe(const std::variant<FreshInit, Checkpoint>& init, const Dataset& data, std::size_t steps,
                          FreezePolicy freeze, const Policy& policy, const Dataset& eval_data,
                          const RunOptions& opts, const LinearEvalConfig& eval) {
  StagePlan plan;
  plan.plan_id = "probe";
  plan.init = init;
  plan.stages.push_back({"target", &data, steps, freeze, policy, {}});
  const PlanResult r = run_plan(plan, opts);
  return linear_eval(r.final_checkpoint(), eval_data, eval).test_score;
}

std::vector<std::pair<std::string, Policy>> removal_levels(const Policy& full, const std::vector<std::string>& order) {
  std::vector<std::pair<std::string, Policy>> out;
  out.emplace_back("full", full);
  std::vector<std::string> removed;
  for (const auto& name : order) {
    removed.push_back(name);
    std::string label = "-";
    for (std::size_t i = 0; i < removed.size(); ++i) label += (i ? "-" : "") + removed[i];
    out.emplace_back(label, ablate(full, removed));
  }
  return out;
}

namespace {

std::string metric_name(const Dataset& ds) { return ds.manifest.multi_label ? "auroc" : "top1"; }

}  // namespace

std::vector<SweepRow> augmentation_sweep(const Checkpoint& base, const Dataset& target, const RobustnessSpec& spec,
                                         const RunOptions& opts, const LinearEvalConfig& eval) {
  const Policy full = default_policy(opts.encoder.input_size);
  std::vector<SweepRow> rows;
  const std::string metric = metric_name(target);
  for (const auto& [label, policy] : removal_levels(full, spec.removal_order)) {
    rows.push_back({label, "HPT", metric,
                    pretrain_and_probe(base, target, spec.steps, FreezePolicy::none, policy, target, opts, eval)});
    rows.push_back({label, "scratch", metric,
                    pretrain_and_probe(FreshInit{opts.seed}, target, spec.scratch_steps, FreezePolicy::none, policy,
                                       target, opts, eval)});
  }
  return rows;
}

std::vector<SweepRow> fraction_sweep(const Checkpoint& base, const Dataset& target, const RobustnessSpec& spec,
                                     const RunOptions& opts, const LinearEvalConfig& eval) {
  const Policy full = default_policy(opts.encoder.input_size);
  std::vector<SweepRow> rows;
  const std::string metric = metric_name(target);
  for (double f : spec.fractions) {
    const Dataset part = restrict_to(target, subsample_fraction(target.manifest, f, opts.seed));
    const std::string label = format_number(f);
    const std::size_t scratch_steps = f < 0.25 ? std::max<std::size_t>(1, spec.scratch_steps / 10) : spec.scratch_steps;
    rows.push_back(
        {label, "HPT", metric, pretrain_and_probe(base, part, spec.steps, FreezePolicy::none, full, target, opts, eval)});
    rows.push_back({label, "HPT-BN", metric,
                    pretrain_and_probe(base, part, spec.steps, FreezePolicy::bn_only, full, target, opts, eval)});
    rows.push_back({label, "scratch", metric,
                    pretrain_and_probe(FreshInit{opts.seed}, part, scratch_steps, FreezePolicy::none, full, target,
                                       opts, eval)});
  }
  return rows;
}

std::string format_number(double v) { return nlohmann::json(v).dump(); }

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& setting_column, std::uint64_t seed,
                     const std::string& config_hash, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << setting_column << ",strategy,metric,value,seed,config_hash\n";
  for (const auto& r : rows)
    out << r.setting << ',' << r.strategy << ',' << r.metric << ',' << format_number(r.value) << ',' << seed << ','
        << config_hash << '\n';
}

}  // namespace hpt
