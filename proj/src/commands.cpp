// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "hpt/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <iostream>
#include <map>
#include <sstream>

#include "hpt/checkpoint.hpp"
#include "hpt/config.hpp"
#include "hpt/error.hpp"
#include "hpt/eval.hpp"
#include "hpt/experiments.hpp"
#include "hpt/pretrain.hpp"
#include "hpt/simil.hpp"

namespace hpt {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::ostream& log_of(const CommandOptions& o) { return o.log ? *o.log : std::cerr; }

template <class F>
int guarded(std::ostream& log, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    log << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    log << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DegenerateError& e) {
    log << "degenerate statistic: " << e.what() << '\n';
    return kExitDegenerate;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

struct Context {
  RunConfig cfg;
  std::string hash;
  fs::path out;
  RunOptions run;
};

Context make_context(const CommandOptions& o) {
  Context c;
  c.cfg = load_config(o.config);
  if (o.seed) c.cfg.seed = *o.seed;
  if (o.out) c.cfg.output_dir = *o.out;
  if (o.determinism) c.cfg.determinism = determinism_from_string(*o.determinism);
  c.cfg.linear_eval.seed = c.cfg.seed;
  c.hash = config_hash(c.cfg);
  c.out = c.cfg.output_dir.is_absolute() || o.out ? c.cfg.output_dir : c.cfg.base_dir / c.cfg.output_dir;
  fs::create_directories(c.out);
  set_worker_cap(c.cfg.determinism == Determinism::strict ? 1 : std::numeric_limits<std::size_t>::max());
  c.run.encoder = c.cfg.encoder;
  c.run.moco = c.cfg.moco;
  c.run.flags = c.cfg.flags;
  c.run.seed = c.cfg.seed;
  c.run.config_hash = c.hash;
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

fs::path resolve(const Context& c, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : c.cfg.base_dir / path;
}

Checkpoint load_compatible(const Context& c, const fs::path& path) {
  Checkpoint ck = load_checkpoint(path);
  check_compatible(ck, c.cfg.encoder);
  return ck;
}

std::string require_dataset(const std::string& name, const char* what) {
  if (name.empty()) throw ConfigError(std::string(what) + " is not configured");
  return name;
}

ojson provenance(const Context& c) {
  return {{"config_hash", c.hash}, {"seed", c.cfg.seed}, {"determinism", to_string(c.cfg.determinism)}};
}

std::string last_stage(const Checkpoint& ck) {
  if (ck.metadata.contains("history") && !ck.metadata["history"].empty())
    return ck.metadata["history"].back().value("stage", "unknown");
  return "init";
}

std::string plan_of(const Checkpoint& ck) {
  if (ck.metadata.contains("history") && !ck.metadata["history"].empty())
    return ck.metadata["history"].back().value("plan_id", "unknown");
  return "none";
}

/// Base checkpoint for sweeps: a file, or the first stage of the configured plan.
Checkpoint sweep_base(const Context& c, const std::string& path) {
  if (!path.empty()) return load_compatible(c, resolve(c, path));
  if (c.cfg.plan.stages.empty()) throw ConfigError("no base checkpoint and no plan stage to pretrain one");
  const StageSpec& s = c.cfg.plan.stages.front();
  const Dataset ds = resolve_dataset(c.cfg, s.dataset);
  StagePlan plan;
  plan.plan_id = c.cfg.plan.plan_id;
  plan.init = FreshInit{c.cfg.seed};
  plan.stages.push_back({s.name, &ds, s.steps, s.freeze,
                         ablate(default_policy(c.cfg.encoder.input_size), s.remove_augmentations), s.overrides});
  return run_plan(plan, c.run).final_checkpoint();
}

}  // namespace

int cmd_pretrain(const CommandOptions& o) {
  return guarded(log_of(o), [&] {
    Context c = make_context(o);
    const RunConfig& cfg = c.cfg;

    std::map<std::string, Dataset> full;
    std::vector<Dataset> stage_data;
    stage_data.reserve(cfg.plan.stages.size());
    for (const auto& s : cfg.plan.stages) {
      if (!full.count(s.dataset)) full.emplace(s.dataset, resolve_dataset(cfg, s.dataset));
      const Dataset& ds = full.at(s.dataset);
      stage_data.push_back(s.fraction < 1.0 ? restrict_to(ds, subsample_fraction(ds.manifest, s.fraction, cfg.seed))
                                            : ds);
    }

    StagePlan plan;
    plan.plan_id = cfg.plan.plan_id;
    if (cfg.plan.init == "fresh")
      plan.init = FreshInit{cfg.seed};
    else
      plan.init = load_compatible(c, resolve(c, cfg.plan.init));
    for (std::size_t i = 0; i < cfg.plan.stages.size(); ++i) {
      const StageSpec& s = cfg.plan.stages[i];
      plan.stages.push_back({s.name, &stage_data[i], s.steps, s.freeze,
                             ablate(default_policy(cfg.encoder.input_size), s.remove_augmentations), s.overrides});
    }

    std::ofstream metrics(c.out / "metrics.jsonl", std::ios::binary);
    if (!metrics) throw DataError("cannot write " + (c.out / "metrics.jsonl").string());
    const bool strict = cfg.determinism == Determinism::strict;
    c.run.on_metric = [&](const MetricEvent& e) {
      ojson j{{"step", e.step},   {"stage_id", e.stage_id}, {"metric", e.metric},
              {"value", e.value}, {"seed", e.seed},         {"wall_ms", strict ? 0.0 : e.wall_ms}};
      metrics << j.dump() << '\n';
    };
    ojson stages = ojson::array();
    c.run.on_stage_end = [&](std::size_t i, const Checkpoint& ck) {
      const std::string file = std::to_string(i) + "-" + cfg.plan.stages[i].name + ".ckpt";
      save_checkpoint(ck, c.out / "checkpoints" / file);
      stages.push_back({{"stage", cfg.plan.stages[i].name},
                        {"checkpoint", "checkpoints/" + file},
                        {"checkpoint_hash", hex64(checkpoint_hash(ck))},
                        {"steps", cfg.plan.stages[i].steps},
                        {"final_loss", ck.metadata["history"].back()["final_loss"]}});
    };
    const PlanResult result = run_plan(plan, c.run);
    if (cfg.plan.stages.empty()) save_checkpoint(result.initial, c.out / "checkpoints" / "init.ckpt");
    metrics.close();

    ojson summary = provenance(c);
    summary["plan_id"] = cfg.plan.plan_id;
    summary["stages"] = stages;
    summary["final_checkpoint_hash"] = hex64(checkpoint_hash(result.final_checkpoint()));
    summary["flags"] = ojson::parse(to_json(cfg).at("flags").dump());
    write_text(c.out / "summary.json", summary.dump(2) + "\n");
    log_of(o) << "pretrain: " << cfg.plan.stages.size() << " stage(s) done, output in " << c.out.string() << '\n';
    return int{kExitOk};
  });
}

int cmd_eval(const CommandOptions& o, const std::string& mode, const fs::path& checkpoint) {
  return guarded(log_of(o), [&] {
    if (mode != "linear" && mode != "finetune") throw ConfigError("eval mode must be 'linear' or 'finetune'");
    Context c = make_context(o);
    const Checkpoint ck = load_compatible(c, checkpoint);
    const Dataset ds = resolve_dataset(c.cfg, require_dataset(c.cfg.eval_dataset, "eval_dataset"));
    const EvalReport rep = mode == "linear" ? linear_eval(ck, ds, c.cfg.linear_eval)
                                            : finetune_semi(ck, ds, c.cfg.finetune, c.cfg.seed);
    ojson j = rep.to_json();
    const ojson prov = provenance(c);
    for (const auto& [k, v] : prov.items()) j[k] = v;
    j["plan_id"] = plan_of(ck);
    j["stage"] = last_stage(ck);
    j["dataset"] = c.cfg.eval_dataset;
    j["flags"] = ck.metadata.contains("history") && !ck.metadata["history"].empty()
                     ? ck.metadata["history"].back().value("flags", ojson::object())
                     : ojson::object();
    write_text(c.out / ("eval_" + mode + ".json"), j.dump(2) + "\n");
    std::ostringstream csv;
    csv << "plan_id,stage,mode,metric,value,seed\n"
        << plan_of(ck) << ',' << last_stage(ck) << ',' << mode << ',' << rep.metric << ','
        << format_number(rep.test_score) << ',' << c.cfg.seed << '\n';
    write_text(c.out / ("eval_" + mode + ".csv"), csv.str());
    log_of(o) << "eval " << mode << ": " << rep.metric << " = " << format_number(rep.test_score) << " (selected "
              << rep.selected_cell().label << ")\n";
    return int{kExitOk};
  });
}

int cmd_robustness(const CommandOptions& o, const std::string& sweep) {
  return guarded(log_of(o), [&] {
    if (sweep != "augmentation" && sweep != "fraction")
      throw ConfigError("sweep must be 'augmentation' or 'fraction'");
    Context c = make_context(o);
    const auto& spec = c.cfg.robustness;
    const Dataset target = resolve_dataset(c.cfg, require_dataset(spec.target, "robustness.target"));
    const Checkpoint base = sweep_base(c, spec.base_checkpoint);
    const auto rows = sweep == "augmentation" ? augmentation_sweep(base, target, spec, c.run, c.cfg.linear_eval)
                                              : fraction_sweep(base, target, spec, c.run, c.cfg.linear_eval);
    write_sweep_csv(rows, sweep == "augmentation" ? "policy" : "fraction", c.cfg.seed, c.hash,
                    c.out / ("robustness_" + sweep + ".csv"));
    log_of(o) << "robustness " << sweep << ": " << rows.size() << " rows\n";
    return int{kExitOk};
  });
}

int cmd_similarity(const CommandOptions& o, const fs::path& a, const fs::path& b,
                   const std::optional<std::string>& dataset_opt, const std::optional<std::string>& layer_opt) {
  return guarded(log_of(o), [&] {
    Context c = make_context(o);
    const std::string layer = layer_opt.value_or(c.cfg.similarity.layer);
    if (layer != "features" && layer != "head") throw ConfigError("layer must be 'features' or 'head'");
    const std::string dname = dataset_opt.value_or(
        c.cfg.similarity.dataset.empty() ? c.cfg.eval_dataset : c.cfg.similarity.dataset);
    const Dataset ds = resolve_dataset(c.cfg, require_dataset(dname, "similarity.dataset"));
    if (ds.manifest.multi_label) throw ConfigError("similarity needs a single-label dataset");
    const auto test = ds.manifest.indices(Split::test);

    struct Side {
      Checkpoint ck;
      EvalReport rep;
      Tensor acts;
      std::string hash;
    };
    std::vector<Side> sides;
    for (const fs::path& p : {a, b}) {
      Side s{load_compatible(c, p), {}, {}, {}};
      s.hash = hex64(checkpoint_hash(s.ck));
      s.rep = linear_eval(s.ck, ds, c.cfg.linear_eval);
      if (layer == "features") {
        Encoder enc = s.ck.state.q;
        s.acts = extract_features(enc, ds, test);
      } else {
        s.acts = s.rep.test_scores;
      }
      sides.push_back(std::move(s));
    }
    std::vector<std::size_t> labels;
    for (auto i : test) labels.push_back(ds.manifest.records[i].labels.at(0));
    const double iou = error_iou(sides[0].rep.test_predictions, sides[1].rep.test_predictions, labels);

    for (std::size_t i = 0; i < 2; ++i) {
      ActivationMatrix m{sides[i].acts, ojson{{"checkpoint_hash", sides[i].hash},
                                              {"layer", layer},
                                              {"dataset_hash", hex64(dataset_hash(ds))}}};
      save_activations(m, c.out / (i == 0 ? "acts_a.bin" : "acts_b.bin"));
    }
    ojson j = provenance(c);
    j["layer"] = layer;
    j["dataset"] = dname;
    j["examples"] = test.size();
    j["checkpoint_a"] = sides[0].hash;
    j["checkpoint_b"] = sides[1].hash;
    j["error_iou"] = iou;
    const double r = rv2(sides[0].acts, sides[1].acts);
    j["rv2"] = r;
    write_text(c.out / "similarity.json", j.dump(2) + "\n");
    log_of(o) << "similarity: rv2 = " << format_number(r) << ", error IoU = " << format_number(iou) << '\n';
    return int{kExitOk};
  });
}

int cmd_select_source(const CommandOptions& o) {
  return guarded(log_of(o), [&] {
    Context c = make_context(o);
    const auto& spec = c.cfg.select_source;
    if (spec.candidates.empty()) throw ConfigError("select_source.candidates is empty");
    const Dataset target = resolve_dataset(c.cfg, require_dataset(spec.target, "select_source.target"));
    const Checkpoint base = spec.base_checkpoint.empty() ? fresh_checkpoint(c.run, c.cfg.seed)
                                                         : load_compatible(c, resolve(c, spec.base_checkpoint));
    std::vector<Dataset> data;
    data.reserve(spec.candidates.size());
    std::vector<Candidate> cands;
    for (const auto& name : spec.candidates) data.push_back(resolve_dataset(c.cfg, name));
    for (std::size_t i = 0; i < spec.candidates.size(); ++i) cands.push_back({spec.candidates[i], &data[i]});
    const SourceSelection sel = select_source(base, cands, target, spec.probe_steps, c.run, c.cfg.linear_eval,
                                              default_policy(c.cfg.encoder.input_size));
    std::ostringstream csv;
    csv << "candidate,score,winner,seed,config_hash\n";
    for (const auto& [name, score] : sel.scores)
      csv << name << ',' << format_number(score) << ',' << (name == sel.winner ? 1 : 0) << ',' << c.cfg.seed << ','
          << c.hash << '\n';
    write_text(c.out / "select_source.csv", csv.str());
    ojson j = provenance(c);
    j["winner"] = sel.winner;
    j["tie"] = sel.tie;
    ojson scores = ojson::array();
    for (const auto& [name, score] : sel.scores) scores.push_back({{"candidate", name}, {"score", score}});
    j["scores"] = scores;
    write_text(c.out / "select_source.json", j.dump(2) + "\n");
    log_of(o) << "select-source: winner " << sel.winner << (sel.tie ? " (tie)" : "") << '\n';
    return int{kExitOk};
  });
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

int cmd_report(const std::vector<fs::path>& inputs, const fs::path& out, std::ostream* log_ptr) {
  std::ostream& log = log_ptr ? *log_ptr : std::cerr;
  return guarded(log, [&] {
    std::vector<fs::path> files;
    for (const auto& p : inputs) {
      if (fs::is_directory(p)) {
        for (const auto& e : fs::recursive_directory_iterator(p))
          if (e.is_regular_file() && e.path().extension() == ".csv" && fs::absolute(e.path()) != fs::absolute(out))
            files.push_back(e.path());
      } else if (fs::exists(p)) {
        files.push_back(p);
      } else {
        throw MissingFileError("report input not found: " + p.string());
      }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("report: no CSV inputs");

    std::vector<std::string> columns{"source"};
    std::vector<std::map<std::string, std::string>> rows;
    for (const auto& f : files) {
      std::ifstream in(f);
      std::string line;
      if (!std::getline(in, line)) continue;
      const auto header = split_line(line);
      for (const auto& h : header)
        if (std::find(columns.begin(), columns.end(), h) == columns.end()) columns.push_back(h);
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_line(line);
        std::map<std::string, std::string> row{{"source", f.generic_string()}};
        for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
        rows.push_back(std::move(row));
      }
    }
    std::ostringstream csv;
    for (std::size_t i = 0; i < columns.size(); ++i) csv << (i ? "," : "") << columns[i];
    csv << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < columns.size(); ++i) {
        auto it = r.find(columns[i]);
        csv << (i ? "," : "") << (it == r.end() ? "" : it->second);
      }
      csv << '\n';
    }
    write_text(out, csv.str());

    std::vector<std::size_t> width(columns.size());
    for (std::size_t i = 0; i < columns.size(); ++i) {
      width[i] = columns[i].size();
      for (const auto& r : rows)
        if (auto it = r.find(columns[i]); it != r.end()) width[i] = std::max(width[i], it->second.size());
    }
    for (std::size_t i = 0; i < columns.size(); ++i) log << std::left << std::setw(int(width[i]) + 2) << columns[i];
    log << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < columns.size(); ++i) {
        auto it = r.find(columns[i]);
        log << std::left << std::setw(int(width[i]) + 2) << (it == r.end() ? "" : it->second);
      }
      log << '\n';
    }
    return int{kExitOk};
  });
}

}  // namespace hpt
