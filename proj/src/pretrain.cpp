// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "hpt/pretrain.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "hpt/error.hpp"
#include "hpt/eval.hpp"
#include "hpt/rng.hpp"

namespace hpt {

MoCoConfig MoCoOverrides::apply(MoCoConfig base) const {
  if (lr) base.lr = *lr;
  if (batch_size) base.batch_size = *batch_size;
  if (queue_size) base.queue_size = *queue_size;
  if (momentum) base.momentum = *momentum;
  if (temperature) base.temperature = *temperature;
  if (weight_decay) base.weight_decay = *weight_decay;
  return base;
}

namespace {

constexpr std::uint64_t kQueueTag = 0x71;
constexpr std::uint64_t kBatchTag = 0x62;

nlohmann::ordered_json flags_json(const EngineFlags& f) {
  return {{"key_bn_mode", to_string(f.key_bn_mode)},
          {"bn_stage_updates_running_stats", f.bn_stage_updates_running_stats},
          {"ema_during_bn_stages", f.ema_during_bn_stages}};
}

std::size_t history_length(const Checkpoint& c) {
  if (!c.metadata.contains("history")) return 0;
  return c.metadata["history"].size();
}

/// Endless stream of shuffled passes over the train records.
class BatchSampler {
public:
  BatchSampler(std::vector<std::size_t> pool, std::uint64_t seed) : pool_(std::move(pool)), rng_(seed) {
    reshuffle();
  }
  std::vector<std::size_t> next(std::size_t n) {
    std::vector<std::size_t> out;
    out.reserve(n);
    while (out.size() < n) {
      if (cursor_ == order_.size()) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

private:
  void reshuffle() {
    order_ = pool_;
    rng_.shuffle(order_);
    cursor_ = 0;
  }
  std::vector<std::size_t> pool_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

}  // namespace

Checkpoint fresh_checkpoint(const RunOptions& opts, std::uint64_t seed) {
  MoCoConfig cfg = opts.moco;
  cfg.proj_dim = opts.encoder.proj_dim;
  Checkpoint c;
  c.state = init_state(cfg, opts.encoder, seed);
  c.metadata["init"] = {{"kind", "fresh"}, {"seed", seed}};
  c.metadata["history"] = nlohmann::ordered_json::array();
  return c;
}

PlanResult run_plan(const StagePlan& plan, const RunOptions& opts) {
  if (plan.plan_id.empty()) throw ConfigError("plan_id must not be empty");
  PlanResult result;
  if (const auto* fresh = std::get_if<FreshInit>(&plan.init)) {
    result.initial = fresh_checkpoint(opts, fresh->seed);
  } else {
    result.initial = std::get<Checkpoint>(plan.init);
    check_compatible(result.initial, opts.encoder);
  }
  if (!result.initial.metadata.contains("history")) result.initial.metadata["history"] = nlohmann::ordered_json::array();

  const Checkpoint* prev = &result.initial;
  for (std::size_t si = 0; si < plan.stages.size(); ++si) {
    const Stage& stage = plan.stages[si];
    if (!stage.dataset) throw DataError("stage " + stage.name + " has no dataset");
    const auto pool = stage.dataset->manifest.indices(Split::train);
    if (pool.empty()) throw DataError("stage " + stage.name + ": dataset has no train records");
    stage.policy.validate();
    if (stage.policy.output_size() != opts.encoder.input_size)
      throw ConfigError("stage " + stage.name + ": policy crops to " + std::to_string(stage.policy.output_size()) +
                        " px but the encoder expects " + std::to_string(opts.encoder.input_size));

    const std::size_t ordinal = history_length(*prev);
    MoCoConfig cfg = stage.overrides.apply(opts.moco);
    cfg.total_steps = stage.steps;
    cfg.proj_dim = opts.encoder.proj_dim;

    Checkpoint cur;
    cur.metadata = prev->metadata;
    cur.state = init_state(cfg, prev->state.q, prev->state.k, derive_seed(opts.seed, {ordinal, kQueueTag}));

    const Partition part = param_partition(cur.state.q.params(), stage.freeze);
    const bool bn_only = stage.freeze == FreezePolicy::bn_only;
    BatchSampler sampler(pool, derive_seed(opts.seed, {ordinal, kBatchTag}));
    const StepStreams streams{opts.seed, ordinal};
    const std::string stage_id = plan.plan_id + "/" + stage.name;

    double last_loss = 0.0;
    for (std::size_t s = 0; s < stage.steps; ++s) {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<const Image*> batch;
      for (auto idx : sampler.next(cfg.batch_size)) batch.push_back(&stage.dataset->image(idx));
      try {
        last_loss = train_step(cur.state, batch, stage.policy, part.frozen, streams, opts.flags, bn_only);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " in stage '" + stage_id + "' (lr0 " + std::to_string(cfg.lr) +
                           ", batch " + std::to_string(cfg.batch_size) + ")");
      }
      if (opts.on_metric) {
        const auto t1 = std::chrono::steady_clock::now();
        opts.on_metric({s, stage_id, "loss", last_loss, opts.seed,
                        std::chrono::duration<double, std::milli>(t1 - t0).count()});
      }
    }

    nlohmann::ordered_json entry;
    entry["plan_id"] = plan.plan_id;
    entry["stage"] = stage.name;
    entry["ordinal"] = ordinal;
    entry["steps"] = stage.steps;
    entry["freeze"] = to_string(stage.freeze);
    entry["policy"] = stage.policy.names();
    entry["dataset_hash"] = hex64(dataset_hash(*stage.dataset));
    entry["moco"] = to_json(cfg);
    entry["flags"] = flags_json(opts.flags);
    entry["queue_reset"] = true;
    entry["velocity_reset"] = true;
    entry["final_loss"] = last_loss;
    cur.metadata["history"].push_back(entry);
    cur.metadata["seed"] = opts.seed;
    cur.metadata["config_hash"] = opts.config_hash;
    cur.metadata["rng"] = {{"seed", opts.seed}, {"next_stage_ordinal", ordinal + 1}};

    result.stages.push_back(std::move(cur));
    if (opts.on_stage_end) opts.on_stage_end(si, result.stages.back());
    prev = &result.stages.back();
  }
  return result;
}

Checkpoint refresh_bn_stats(const Checkpoint& ckpt, const Dataset& dataset, std::size_t passes,
                            std::size_t batch_size) {
  if (passes < 1) throw ContractError("refresh_bn_stats: passes must be at least 1");
  if (batch_size < 1) throw ContractError("refresh_bn_stats: batch size must be positive");
  const auto pool = dataset.manifest.indices(Split::train);
  if (pool.empty()) throw DataError("refresh_bn_stats: dataset has no train records");
  Checkpoint out = ckpt;
  Encoder& enc = out.state.q;
  const std::size_t size = enc.config().input_size;
  std::vector<Image> prepped;
  prepped.reserve(pool.size());
  for (auto idx : pool) prepped.push_back(eval_preprocess(dataset.image(idx), size));
  for (std::size_t p = 0; p < passes; ++p) {
    for (std::size_t lo = 0; lo < prepped.size(); lo += batch_size) {
      const std::size_t hi = std::min(prepped.size(), lo + batch_size);
      std::vector<const Image*> batch;
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(&prepped[i]);
      embed(enc, stack_images(batch), {Mode::train, false, true});
    }
  }
  out.metadata["bn_refresh"] = {{"passes", passes}, {"batch_size", batch_size},
                                {"dataset_hash", hex64(dataset_hash(dataset))}};
  return out;
}

SourceSelection select_source(const Checkpoint& base, const std::vector<Candidate>& candidates,
                              const Dataset& target, std::size_t probe_steps, const RunOptions& opts,
                              const LinearEvalConfig& probe_eval, const Policy& policy) {
  if (candidates.empty()) throw ConfigError("select_source: no candidates");
  if (probe_steps == 0) throw ConfigError("select_source: probe_steps must be positive");
  SourceSelection sel;
  for (const auto& cand : candidates) {
    StagePlan plan;
    plan.plan_id = "probe-" + cand.name;
    plan.init = base;
    plan.stages.push_back({cand.name, cand.dataset, probe_steps, FreezePolicy::none, policy, {}});
    RunOptions o = opts;
    o.on_metric = nullptr;
    o.on_stage_end = nullptr;
    const PlanResult r = run_plan(plan, o);
    const EvalReport rep = linear_eval(r.final_checkpoint(), target, probe_eval);
    sel.scores.emplace_back(cand.name, rep.selected_cell().val_score);
  }
  double best = -1.0;
  for (const auto& [name, score] : sel.scores) {
    if (score > best || (score == best && name < sel.winner)) {
      best = score;
      sel.winner = name;
    }
  }
  sel.tie = std::count_if(sel.scores.begin(), sel.scores.end(), [&](const auto& s) { return s.second == best; }) > 1;
  return sel;
}

}  // namespace hpt
