// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "hpt/config.hpp"

#include <fstream>
#include <set>

#include "hpt/error.hpp"
#include "hpt/rng.hpp"

namespace hpt {

using nlohmann::json;

std::string to_string(Determinism d) { return d == Determinism::strict ? "strict" : "fast"; }

Determinism determinism_from_string(const std::string& s) {
  if (s == "strict") return Determinism::strict;
  if (s == "fast") return Determinism::fast;
  throw ConfigError("determinism must be 'strict' or 'fast', got '" + s + "'");
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <class T>
void get(const json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type (" + j.at(key).dump() + ")");
  }
}

template <class T>
void get_opt(const json& j, const char* key, std::optional<T>& dst, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  T v{};
  get(j, key, v, where);
  dst = v;
}

Palette palette_from(const json& j, const std::string& where) {
  check_keys(j, {"mean", "var"}, where);
  Palette p;
  get(j, "mean", p.mean, where);
  get(j, "var", p.var, where);
  return p;
}

DomainSpec domain_from(const json& j, const std::string& where) {
  check_keys(j, {"name", "palette", "shape_family", "noise_level", "class_count", "image_size", "color_shift"},
             where);
  DomainSpec d;
  get(j, "name", d.name, where);
  if (j.contains("palette")) d.palette = palette_from(j["palette"], where + ".palette");
  std::string fam = to_string(d.shape_family);
  get(j, "shape_family", fam, where);
  try {
    d.shape_family = shape_family_from_string(fam);
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  get(j, "noise_level", d.noise_level, where);
  get(j, "color_shift", d.color_shift, where);
  get(j, "class_count", d.class_count, where);
  get(j, "image_size", d.image_size, where);
  d.validate();
  return d;
}

DatasetRef dataset_from(const std::string& name, const json& j) {
  const std::string where = "datasets." + name;
  DatasetRef r;
  r.name = name;
  if (j.contains("synthetic")) {
    check_keys(j, {"synthetic"}, where);
    const json& s = j["synthetic"];
    check_keys(s, {"n", "seed", "splits", "domains"}, where + ".synthetic");
    get(s, "n", r.n, where);
    get(s, "seed", r.seed, where);
    if (s.contains("splits")) {
      check_keys(s["splits"], {"train", "val", "test"}, where + ".splits");
      get(s["splits"], "train", r.splits.train, where);
      get(s["splits"], "val", r.splits.val, where);
      get(s["splits"], "test", r.splits.test, where);
    }
    if (!s.contains("domains") || !s["domains"].is_array() || s["domains"].empty())
      throw ConfigError(where + ": synthetic datasets need a non-empty 'domains' list");
    for (std::size_t i = 0; i < s["domains"].size(); ++i)
      r.domains.push_back(domain_from(s["domains"][i], where + ".domains[" + std::to_string(i) + "]"));
    if (r.n < r.domains.size()) throw ConfigError(where + ": n smaller than the number of domains");
    r.class_count = 0;
    for (const auto& d : r.domains) r.class_count = std::max(r.class_count, d.class_count);
  } else {
    check_keys(j, {"manifest", "class_count", "multi_label", "domain"}, where);
    std::string path;
    get(j, "manifest", path, where);
    if (path.empty()) throw ConfigError(where + ": needs 'manifest' or 'synthetic'");
    r.manifest = path;
    get(j, "class_count", r.class_count, where);
    get(j, "multi_label", r.multi_label, where);
    if (j.contains("domain")) r.domains.push_back(domain_from(j["domain"], where + ".domain"));
    if (r.class_count < 2) throw ConfigError(where + ": class_count must be >= 2");
  }
  return r;
}

MoCoOverrides overrides_from(const json& j, const std::string& where) {
  check_keys(j, {"lr", "batch_size", "queue_size", "momentum", "temperature", "weight_decay"}, where);
  MoCoOverrides o;
  get_opt(j, "lr", o.lr, where);
  get_opt(j, "batch_size", o.batch_size, where);
  get_opt(j, "queue_size", o.queue_size, where);
  get_opt(j, "momentum", o.momentum, where);
  get_opt(j, "temperature", o.temperature, where);
  get_opt(j, "weight_decay", o.weight_decay, where);
  return o;
}

StageSpec stage_from(const json& j, const std::string& where) {
  check_keys(j, {"name", "dataset", "steps", "freeze", "remove_augmentations", "fraction", "moco"}, where);
  StageSpec s;
  get(j, "name", s.name, where);
  get(j, "dataset", s.dataset, where);
  get(j, "steps", s.steps, where);
  std::string freeze = "none";
  get(j, "freeze", freeze, where);
  s.freeze = freeze_policy_from_string(freeze);
  get(j, "remove_augmentations", s.remove_augmentations, where);
  get(j, "fraction", s.fraction, where);
  if (!(s.fraction > 0 && s.fraction <= 1)) throw ConfigError(where + ": fraction must lie in (0, 1]");
  if (j.contains("moco")) s.overrides = overrides_from(j["moco"], where + ".moco");
  if (s.name.empty()) throw ConfigError(where + ": stage needs a name");
  return s;
}

json overrides_json(const MoCoOverrides& o) {
  json j = json::object();
  if (o.lr) j["lr"] = *o.lr;
  if (o.batch_size) j["batch_size"] = *o.batch_size;
  if (o.queue_size) j["queue_size"] = *o.queue_size;
  if (o.momentum) j["momentum"] = *o.momentum;
  if (o.temperature) j["temperature"] = *o.temperature;
  if (o.weight_decay) j["weight_decay"] = *o.weight_decay;
  return j;
}

json domain_json(const DomainSpec& d) {
  return {{"name", d.name},
          {"palette", {{"mean", d.palette.mean}, {"var", d.palette.var}}},
          {"shape_family", to_string(d.shape_family)},
          {"noise_level", d.noise_level},
          {"color_shift", d.color_shift},
          {"class_count", d.class_count},
          {"image_size", d.image_size}};
}

}  // namespace

RunConfig parse_config(const json& j) {
  check_keys(j, {"seed", "output_dir", "encoder", "moco", "flags", "determinism", "datasets", "plan", "linear_eval",
                 "finetune", "eval_dataset", "robustness", "select_source", "similarity"},
             "config");
  RunConfig c;
  get(j, "seed", c.seed, "config");
  std::string out = c.output_dir.string();
  get(j, "output_dir", out, "config");
  c.output_dir = out;
  if (j.contains("encoder")) {
    check_keys(j["encoder"], {"input_size", "stage_widths", "blocks_per_stage", "embed_dim", "proj_dim"}, "encoder");
    c.encoder = encoder_config_from_json(j["encoder"]);
  }
  if (j.contains("moco")) {
    check_keys(j["moco"], {"proj_dim", "queue_size", "momentum", "temperature", "lr", "sgd_momentum",
                           "weight_decay", "batch_size", "total_steps"},
               "moco");
    c.moco = moco_config_from_json(j["moco"]);
  }
  if (c.moco.proj_dim != c.encoder.proj_dim)
    throw ConfigError("moco.proj_dim (" + std::to_string(c.moco.proj_dim) + ") differs from encoder.proj_dim (" +
                      std::to_string(c.encoder.proj_dim) + ")");
  if (j.contains("flags")) {
    const json& f = j["flags"];
    check_keys(f, {"key_bn_mode", "bn_stage_updates_running_stats", "ema_during_bn_stages"}, "flags");
    std::string mode = to_string(c.flags.key_bn_mode);
    get(f, "key_bn_mode", mode, "flags");
    c.flags.key_bn_mode = key_bn_mode_from_string(mode);
    get(f, "bn_stage_updates_running_stats", c.flags.bn_stage_updates_running_stats, "flags");
    get(f, "ema_during_bn_stages", c.flags.ema_during_bn_stages, "flags");
  }
  std::string det = to_string(c.determinism);
  get(j, "determinism", det, "config");
  c.determinism = determinism_from_string(det);

  if (j.contains("datasets")) {
    if (!j["datasets"].is_object()) throw ConfigError("datasets must be an object");
    for (const auto& [name, v] : j["datasets"].items()) c.datasets[name] = dataset_from(name, v);
  }
  if (j.contains("plan")) {
    const json& p = j["plan"];
    check_keys(p, {"plan_id", "init", "stages"}, "plan");
    get(p, "plan_id", c.plan.plan_id, "plan");
    get(p, "init", c.plan.init, "plan");
    if (p.contains("stages")) {
      if (!p["stages"].is_array()) throw ConfigError("plan.stages must be a list");
      for (std::size_t i = 0; i < p["stages"].size(); ++i)
        c.plan.stages.push_back(stage_from(p["stages"][i], "plan.stages[" + std::to_string(i) + "]"));
    }
    if (c.plan.plan_id.empty()) throw ConfigError("plan.plan_id must not be empty");
  }
  if (j.contains("linear_eval")) {
    const json& e = j["linear_eval"];
    check_keys(e, {"lr_grid", "batch", "steps", "momentum"}, "linear_eval");
    get(e, "lr_grid", c.linear_eval.lr_grid, "linear_eval");
    get(e, "batch", c.linear_eval.batch, "linear_eval");
    get(e, "steps", c.linear_eval.steps, "linear_eval");
    get(e, "momentum", c.linear_eval.momentum, "linear_eval");
  }
  c.linear_eval.seed = c.seed;
  c.linear_eval.validate();
  if (j.contains("finetune")) {
    const json& f = j["finetune"];
    check_keys(f, {"budget", "lrs", "schedules", "batch", "momentum", "weight_decay"}, "finetune");
    get(f, "budget", c.finetune.budget, "finetune");
    get(f, "lrs", c.finetune.lrs, "finetune");
    if (f.contains("schedules")) {
      c.finetune.schedules.clear();
      if (!f["schedules"].is_array()) throw ConfigError("finetune.schedules must be a list");
      for (const auto& s : f["schedules"]) {
        check_keys(s, {"name", "steps"}, "finetune.schedules[]");
        std::string name;
        std::size_t steps = 0;
        get(s, "name", name, "finetune.schedules[]");
        get(s, "steps", steps, "finetune.schedules[]");
        c.finetune.schedules.emplace_back(name, steps);
      }
    }
    get(f, "batch", c.finetune.batch, "finetune");
    get(f, "momentum", c.finetune.momentum, "finetune");
    get(f, "weight_decay", c.finetune.weight_decay, "finetune");
  }
  c.finetune.validate();
  get(j, "eval_dataset", c.eval_dataset, "config");
  if (j.contains("robustness")) {
    const json& r = j["robustness"];
    check_keys(r, {"base_checkpoint", "target", "steps", "removal_order", "fractions", "scratch_steps"}, "robustness");
    get(r, "base_checkpoint", c.robustness.base_checkpoint, "robustness");
    get(r, "target", c.robustness.target, "robustness");
    get(r, "steps", c.robustness.steps, "robustness");
    get(r, "removal_order", c.robustness.removal_order, "robustness");
    get(r, "fractions", c.robustness.fractions, "robustness");
    get(r, "scratch_steps", c.robustness.scratch_steps, "robustness");
    for (double f : c.robustness.fractions)
      if (!(f > 0 && f <= 1)) throw ConfigError("robustness.fractions must lie in (0, 1]");
  }
  if (j.contains("select_source")) {
    const json& s = j["select_source"];
    check_keys(s, {"base_checkpoint", "candidates", "target", "probe_steps"}, "select_source");
    get(s, "base_checkpoint", c.select_source.base_checkpoint, "select_source");
    get(s, "candidates", c.select_source.candidates, "select_source");
    get(s, "target", c.select_source.target, "select_source");
    get(s, "probe_steps", c.select_source.probe_steps, "select_source");
  }
  if (j.contains("similarity")) {
    const json& s = j["similarity"];
    check_keys(s, {"dataset", "layer"}, "similarity");
    get(s, "dataset", c.similarity.dataset, "similarity");
    get(s, "layer", c.similarity.layer, "similarity");
    if (c.similarity.layer != "features" && c.similarity.layer != "head")
      throw ConfigError("similarity.layer must be 'features' or 'head'");
  }

  auto known = [&](const std::string& name, const std::string& where) {
    if (!name.empty() && !c.datasets.count(name)) throw ConfigError(where + " names unknown dataset '" + name + "'");
  };
  for (const auto& s : c.plan.stages) known(s.dataset, "stage " + s.name);
  known(c.eval_dataset, "eval_dataset");
  known(c.robustness.target, "robustness.target");
  known(c.select_source.target, "select_source.target");
  for (const auto& n : c.select_source.candidates) known(n, "select_source.candidates");
  known(c.similarity.dataset, "similarity.dataset");
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, false);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig c = parse_config(j);
  c.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  j["encoder"] = json(to_json(c.encoder));
  j["moco"] = json(to_json(c.moco));
  j["flags"] = {{"key_bn_mode", to_string(c.flags.key_bn_mode)},
                {"bn_stage_updates_running_stats", c.flags.bn_stage_updates_running_stats},
                {"ema_during_bn_stages", c.flags.ema_during_bn_stages}};
  j["determinism"] = to_string(c.determinism);
  json ds = json::object();
  for (const auto& [name, r] : c.datasets) {
    if (r.manifest.empty()) {
      json doms = json::array();
      for (const auto& d : r.domains) doms.push_back(domain_json(d));
      ds[name] = {{"synthetic",
                   {{"n", r.n},
                    {"seed", r.seed},
                    {"splits", {{"train", r.splits.train}, {"val", r.splits.val}, {"test", r.splits.test}}},
                    {"domains", doms}}}};
    } else {
      ds[name] = {{"manifest", r.manifest.string()}, {"class_count", r.class_count}, {"multi_label", r.multi_label}};
      if (!r.domains.empty()) ds[name]["domain"] = domain_json(r.domains[0]);
    }
  }
  j["datasets"] = ds;
  json stages = json::array();
  for (const auto& s : c.plan.stages)
    stages.push_back({{"name", s.name},
                      {"dataset", s.dataset},
                      {"steps", s.steps},
                      {"freeze", to_string(s.freeze)},
                      {"remove_augmentations", s.remove_augmentations},
                      {"fraction", s.fraction},
                      {"moco", overrides_json(s.overrides)}});
  j["plan"] = {{"plan_id", c.plan.plan_id}, {"init", c.plan.init}, {"stages", stages}};
  j["linear_eval"] = {{"lr_grid", c.linear_eval.lr_grid},
                      {"batch", c.linear_eval.batch},
                      {"steps", c.linear_eval.steps},
                      {"momentum", c.linear_eval.momentum}};
  json sched = json::array();
  for (const auto& [n, s] : c.finetune.schedules) sched.push_back({{"name", n}, {"steps", s}});
  j["finetune"] = {{"budget", c.finetune.budget},   {"lrs", c.finetune.lrs},
                   {"schedules", sched},            {"batch", c.finetune.batch},
                   {"momentum", c.finetune.momentum}, {"weight_decay", c.finetune.weight_decay}};
  j["eval_dataset"] = c.eval_dataset;
  j["robustness"] = {{"base_checkpoint", c.robustness.base_checkpoint},
                     {"target", c.robustness.target},
                     {"steps", c.robustness.steps},
                     {"removal_order", c.robustness.removal_order},
                     {"fractions", c.robustness.fractions},
                     {"scratch_steps", c.robustness.scratch_steps}};
  j["select_source"] = {{"base_checkpoint", c.select_source.base_checkpoint},
                        {"candidates", c.select_source.candidates},
                        {"target", c.select_source.target},
                        {"probe_steps", c.select_source.probe_steps}};
  j["similarity"] = {{"dataset", c.similarity.dataset}, {"layer", c.similarity.layer}};
  return j;
}

std::string canonical_text(const RunConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("output_dir");  // where results land does not change them
  return j.dump();
}

std::string config_hash(const RunConfig& c) { return hex64(fnv1a64(canonical_text(c))); }

Dataset resolve_dataset(const RunConfig& c, const std::string& name) {
  auto it = c.datasets.find(name);
  if (it == c.datasets.end()) throw ConfigError("unknown dataset '" + name + "'");
  const DatasetRef& r = it->second;
  if (!r.manifest.empty()) {
    const auto path = r.manifest.is_absolute() ? r.manifest : c.base_dir / r.manifest;
    Manifest m = load_manifest(path, r.class_count, r.multi_label);
    return load_dataset(m, path.parent_path(), r.domains.empty() ? nullptr : &r.domains[0]);
  }
  if (r.domains.size() == 1) return gen_synthetic(r.domains[0], r.n, r.seed, r.splits);
  std::vector<Dataset> parts;
  const std::size_t per = r.n / r.domains.size();
  for (std::size_t i = 0; i < r.domains.size(); ++i) {
    const std::size_t n = i + 1 == r.domains.size() ? r.n - per * i : per;
    parts.push_back(gen_synthetic(r.domains[i], n, r.seed, r.splits));
  }
  return merge(parts);
}

}  // namespace hpt
