// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "hpt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "hpt/error.hpp"
#include "hpt/rng.hpp"

namespace hpt {

void LinearEvalConfig::validate() const {
  if (lr_grid.empty()) throw ConfigError("linear eval: lr grid is empty");
  for (double lr : lr_grid)
    if (!(lr > 0)) throw ConfigError("linear eval: learning rates must be positive");
  if (batch == 0 || steps == 0) throw ConfigError("linear eval: batch and steps must be positive");
}

void FinetuneConfig::validate() const {
  if (lrs.empty() || schedules.empty()) throw ConfigError("finetune: empty grid");
  if (budget == 0 || batch == 0) throw ConfigError("finetune: budget and batch must be positive");
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = mode;
  j["metric"] = metric;
  auto& g = j["grid"] = nlohmann::ordered_json::array();
  for (const auto& c : grid)
    g.push_back({{"label", c.label}, {"lr", c.lr}, {"steps", c.steps}, {"val_score", c.val_score},
                 {"diverged", c.diverged}});
  j["selected"] = grid.empty() ? nlohmann::ordered_json() : nlohmann::ordered_json(grid[selected].label);
  j["test_score"] = test_score;
  j["seed"] = seed;
  j["checkpoint_hash"] = checkpoint_hash;
  if (!budget_ids.empty()) j["budget_ids"] = budget_ids;
  j["skipped_classes"] = skipped_classes;
  return j;
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

std::size_t argmax_row(const Tensor& s, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < s.dim(1); ++c)
    if (s.at(r, c) > s.at(r, best)) best = c;
  return best;
}

}  // namespace

double top1(const Tensor& scores, const std::vector<std::size_t>& labels) {
  if (scores.ndim() != 2 || scores.dim(1) < 2) throw ContractError("top1: scores must be N x C with C >= 2");
  if (scores.dim(0) != labels.size()) throw DimensionError("top1: " + std::to_string(labels.size()) +
                                                           " labels for " + std::to_string(scores.dim(0)) + " rows");
  std::size_t hit = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) hit += argmax_row(scores, r) == labels[r];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

AurocResult auroc(const Tensor& scores, const Tensor& targets) {
  if (scores.ndim() != 2 || scores.shape() != targets.shape())
    throw DimensionError("auroc: scores " + shape_str(scores.shape()) + " vs targets " + shape_str(targets.shape()));
  const std::size_t n = scores.dim(0), classes = scores.dim(1);
  AurocResult res;
  double total = 0.0;
  std::size_t valid = 0;
  std::vector<std::size_t> order(n);
  for (std::size_t c = 0; c < classes; ++c) {
    std::uint64_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) pos += targets.at(i, c) > 0.5;
    const std::uint64_t neg = n - pos;
    if (pos == 0 || neg == 0) {
      res.skipped_classes.push_back(c);
      continue;
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores.at(a, c) < scores.at(b, c); });
    // Twice the rank sum of the positives with midranks for ties, kept integral.
    std::uint64_t twice_rank_sum = 0;
    for (std::size_t lo = 0; lo < n;) {
      std::size_t hi = lo;
      while (hi + 1 < n && scores.at(order[hi + 1], c) == scores.at(order[lo], c)) ++hi;
      const std::uint64_t twice_mid = (lo + 1) + (hi + 1);
      for (std::size_t i = lo; i <= hi; ++i)
        if (targets.at(order[i], c) > 0.5) twice_rank_sum += twice_mid;
      lo = hi + 1;
    }
    const std::uint64_t twice_u = twice_rank_sum - pos * (pos + 1);
    total += static_cast<double>(twice_u) / static_cast<double>(2 * pos * neg);
    ++valid;
  }
  if (valid == 0) throw ContractError("auroc: no class has both positive and negative examples");
  res.value = total / static_cast<double>(valid);
  return res;
}

// ---------------------------------------------------------------------------
// Linear probe

Tensor extract_features(Encoder& enc, const Dataset& ds, const std::vector<std::size_t>& records) {
  const std::size_t size = enc.config().input_size, d = enc.config().embed_dim;
  if (records.empty()) return Tensor();
  Tensor out({records.size(), d});
  constexpr std::size_t kChunk = 128;
  for (std::size_t lo = 0; lo < records.size(); lo += kChunk) {
    const std::size_t hi = std::min(records.size(), lo + kChunk);
    std::vector<Image> imgs;
    for (std::size_t i = lo; i < hi; ++i) imgs.push_back(eval_preprocess(ds.image(records[i]), size));
    std::vector<const Image*> ptrs;
    for (const auto& im : imgs) ptrs.push_back(&im);
    const Tensor f = embed(enc, stack_images(ptrs), {Mode::eval, false, false});
    std::copy(f.data().begin(), f.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(lo * d));
  }
  return out;
}

Tensor LinearHead::scores(const Tensor& x) const {
  const std::size_t n = x.dim(0), d = x.dim(1), classes = weight.dim(0);
  Tensor s({n, classes});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < classes; ++c) {
      double acc = bias[c];
      for (std::size_t j = 0; j < d; ++j) acc += x.at(i, j) * weight.at(c, j);
      s.at(i, c) = acc;
    }
  return s;
}

namespace {

double decayed_lr(double lr, std::size_t step, std::size_t steps) {
  if (step >= 2 * steps / 3) return lr * 0.01;
  if (step >= steps / 3) return lr * 0.1;
  return lr;
}

Tensor multi_hot(const std::vector<std::vector<std::size_t>>& labels, std::size_t classes) {
  Tensor t({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (auto c : labels[i]) t.at(i, c) = 1.0;
  return t;
}

std::vector<std::size_t> first_labels(const std::vector<std::vector<std::size_t>>& labels) {
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(l.at(0));
  return out;
}

std::vector<std::vector<std::size_t>> labels_of(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<std::vector<std::size_t>> out;
  for (auto i : idx) out.push_back(ds.manifest.records[i].labels);
  return out;
}

std::size_t pick_best(const std::vector<GridCell>& grid) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i].diverged) continue;
    if (!best || grid[i].val_score > grid[*best].val_score ||
        (grid[i].val_score == grid[*best].val_score && grid[i].lr < grid[*best].lr))
      best = i;
  }
  if (!best) throw NumericError("every grid configuration diverged");
  return *best;
}

}  // namespace

LinearHead train_linear_head(const Tensor& x, const std::vector<std::vector<std::size_t>>& labels,
                             std::size_t classes, bool multi_label, double lr, const LinearEvalConfig& cfg) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (labels.size() != n) throw DimensionError("linear head: labels and features disagree");
  LinearHead h{Tensor({classes, d}), Tensor({classes}), false};
  Tensor vw({classes, d}), vb({classes});
  Rng rng(derive_seed(cfg.seed, {0x6c696e}));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;
  std::vector<double> logits(classes), delta(classes);
  Tensor gw({classes, d}), gb({classes});
  const std::size_t bsz = std::min(cfg.batch, n);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::fill(gw.data().begin(), gw.data().end(), 0.0);
    std::fill(gb.data().begin(), gb.data().end(), 0.0);
    for (std::size_t b = 0; b < bsz; ++b) {
      if (cursor == n) {
        rng.shuffle(order);
        cursor = 0;
      }
      const std::size_t i = order[cursor++];
      for (std::size_t c = 0; c < classes; ++c) {
        double acc = h.bias[c];
        for (std::size_t j = 0; j < d; ++j) acc += x.at(i, j) * h.weight.at(c, j);
        logits[c] = acc;
      }
      if (multi_label) {
        for (std::size_t c = 0; c < classes; ++c) {
          const double t = std::find(labels[i].begin(), labels[i].end(), c) != labels[i].end() ? 1.0 : 0.0;
          delta[c] = (1.0 / (1.0 + std::exp(-logits[c])) - t) / static_cast<double>(classes);
        }
      } else {
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) z += std::exp(logits[c] - mx);
        for (std::size_t c = 0; c < classes; ++c) delta[c] = std::exp(logits[c] - mx) / z;
        delta[labels[i].at(0)] -= 1.0;
      }
      for (std::size_t c = 0; c < classes; ++c) {
        gb[c] += delta[c];
        for (std::size_t j = 0; j < d; ++j) gw.at(c, j) += delta[c] * x.at(i, j);
      }
    }
    const double rate = decayed_lr(lr, step, cfg.steps);
    const double inv = 1.0 / static_cast<double>(bsz);
    for (std::size_t k = 0; k < gw.numel(); ++k) {
      vw[k] = cfg.momentum * vw[k] + gw[k] * inv;
      h.weight[k] -= rate * vw[k];
    }
    for (std::size_t k = 0; k < classes; ++k) {
      vb[k] = cfg.momentum * vb[k] + gb[k] * inv;
      h.bias[k] -= rate * vb[k];
    }
  }
  for (double v : h.weight.data())
    if (!std::isfinite(v)) h.diverged = true;
  for (double v : h.bias.data())
    if (!std::isfinite(v)) h.diverged = true;
  return h;
}

double score_head(const LinearHead& head, const Tensor& x, const std::vector<std::vector<std::size_t>>& labels,
                  std::size_t classes, bool multi_label, std::vector<std::size_t>* skipped) {
  const Tensor s = head.scores(x);
  if (!multi_label) return top1(s, first_labels(labels));
  auto r = auroc(s, multi_hot(labels, classes));
  if (skipped) *skipped = r.skipped_classes;
  return r.value;
}

EvalReport linear_eval_features(const Tensor& train_x, const std::vector<std::vector<std::size_t>>& train_y,
                                const Tensor& val_x, const std::vector<std::vector<std::size_t>>& val_y,
                                const Tensor& test_x, const std::vector<std::vector<std::size_t>>& test_y,
                                std::size_t classes, bool multi_label, const LinearEvalConfig& cfg) {
  cfg.validate();
  if (train_y.empty() || val_y.empty() || test_y.empty()) throw DataError("linear eval: a split is empty");
  if (classes < 2) throw ContractError("linear eval: need at least two classes");
  EvalReport rep;
  rep.mode = "linear";
  rep.metric = multi_label ? "auroc" : "top1";
  rep.seed = cfg.seed;
  std::vector<LinearHead> heads;
  for (double lr : cfg.lr_grid) {
    LinearHead h = train_linear_head(train_x, train_y, classes, multi_label, lr, cfg);
    GridCell cell{"lr=" + nlohmann::json(lr).dump(), lr, cfg.steps, 0.0, h.diverged};
    if (!h.diverged) cell.val_score = score_head(h, val_x, val_y, classes, multi_label);
    rep.grid.push_back(cell);
    heads.push_back(std::move(h));
  }
  rep.selected = pick_best(rep.grid);
  const LinearHead& best = heads[rep.selected];
  rep.test_score = score_head(best, test_x, test_y, classes, multi_label, &rep.skipped_classes);
  rep.test_scores = best.scores(test_x);
  for (std::size_t i = 0; i < rep.test_scores.dim(0); ++i)
    rep.test_predictions.push_back(argmax_row(rep.test_scores, i));
  return rep;
}

EvalReport linear_eval(Encoder& enc, const Dataset& ds, const LinearEvalConfig& cfg) {
  const Manifest& m = ds.manifest;
  const auto tr = m.indices(Split::train), va = m.indices(Split::val), te = m.indices(Split::test);
  if (tr.empty() || va.empty() || te.empty()) throw DataError("linear eval: dataset needs train, val and test records");
  return linear_eval_features(extract_features(enc, ds, tr), labels_of(ds, tr), extract_features(enc, ds, va),
                              labels_of(ds, va), extract_features(enc, ds, te), labels_of(ds, te), m.class_count,
                              m.multi_label, cfg);
}

EvalReport linear_eval(const Checkpoint& ckpt, const Dataset& ds, const LinearEvalConfig& cfg) {
  Encoder enc = ckpt.state.q;
  EvalReport rep = linear_eval(enc, ds, cfg);
  rep.checkpoint_hash = hex64(checkpoint_hash(ckpt));
  return rep;
}

// ---------------------------------------------------------------------------
// Semi-supervised finetuning

namespace {

struct FinetuneResult {
  Encoder enc;
  Tensor weight, bias;
  bool diverged = false;
};

FinetuneResult finetune_cell(const Encoder& init, const Dataset& ds, const std::vector<std::size_t>& pool,
                             bool multi_label, std::size_t classes, double lr, std::size_t steps,
                             const FinetuneConfig& cfg, std::uint64_t seed) {
  FinetuneResult r{init, Tensor({classes, init.config().embed_dim}), Tensor({classes}), false};
  const std::size_t size = init.config().input_size;
  std::vector<Image> prepped;
  for (auto i : pool) prepped.push_back(eval_preprocess(ds.image(i), size));
  ParamSet& ps = r.enc.params();
  std::vector<Tensor*> trainable;
  for (auto& e : ps)
    if (e.trainable()) trainable.push_back(&e.tensor);
  trainable.push_back(&r.weight);
  trainable.push_back(&r.bias);
  std::vector<std::vector<double>> vel(trainable.size());
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    trainable[i]->set_requires_grad(true);
    vel[i].assign(trainable[i]->numel(), 0.0);
  }
  Rng rng(seed);
  const std::size_t bsz = std::min(cfg.batch, pool.size());
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<Image> views;
    std::vector<std::vector<std::size_t>> labels;
    for (std::size_t b = 0; b < bsz; ++b) {
      const std::size_t k = rng.below(pool.size());
      const bool flip = rng.uniform() < 0.5;
      views.push_back(flip ? hflip(prepped[k]) : prepped[k]);
      labels.push_back(ds.manifest.records[pool[k]].labels);
    }
    std::vector<const Image*> ptrs;
    for (const auto& v : views) ptrs.push_back(&v);
    const Tensor x = stack_images(ptrs);
    Graph g;
    Var f = r.enc.forward(g, g.constant_ref(x), {Mode::train, false, true});
    Var logits = linear(f, g.param(r.weight), g.param(r.bias));
    Var loss;
    if (multi_label) {
      loss = sigmoid_bce(logits, multi_hot(labels, classes));
    } else {
      loss = scale(mean(pick(log_softmax(logits), first_labels(labels))), -1.0);
    }
    if (!std::isfinite(loss.value().item())) {
      r.diverged = true;
      break;
    }
    g.backward(loss);
    const double rate = cosine_lr(step, steps, lr);
    for (std::size_t i = 0; i < trainable.size(); ++i) {
      Tensor& t = *trainable[i];
      auto grad = t.grad();
      if (grad.empty()) continue;  // projection head is not in the graph
      auto data = t.data();
      for (std::size_t j = 0; j < data.size(); ++j) {
        vel[i][j] = cfg.momentum * vel[i][j] + grad[j] + cfg.weight_decay * data[j];
        data[j] -= rate * vel[i][j];
      }
      t.drop_grad();
    }
  }
  for (auto* t : trainable) {
    t->set_requires_grad(false);
    t->drop_grad();
  }
  return r;
}

double finetune_score(FinetuneResult& r, const Dataset& ds, const std::vector<std::size_t>& idx, std::size_t classes,
                      bool multi_label, std::vector<std::size_t>* skipped, EvalReport* rep) {
  const Tensor f = extract_features(r.enc, ds, idx);
  LinearHead h{r.weight, r.bias, false};
  const auto y = labels_of(ds, idx);
  if (rep) {
    rep->test_scores = h.scores(f);
    for (std::size_t i = 0; i < rep->test_scores.dim(0); ++i)
      rep->test_predictions.push_back(argmax_row(rep->test_scores, i));
  }
  return score_head(h, f, y, classes, multi_label, skipped);
}

}  // namespace

EvalReport finetune_semi(const Checkpoint& ckpt, const Dataset& ds, const FinetuneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Manifest& m = ds.manifest;
  const auto va = m.indices(Split::val), te = m.indices(Split::test);
  if (va.empty() || te.empty()) throw DataError("finetune: dataset needs val and test records");
  EvalReport rep;
  rep.mode = "finetune";
  rep.metric = m.multi_label ? "auroc" : "top1";
  rep.seed = seed;
  rep.checkpoint_hash = hex64(checkpoint_hash(ckpt));
  rep.budget_ids = label_budget(m, cfg.budget, seed);

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (std::binary_search(rep.budget_ids.begin(), rep.budget_ids.end(), m.records[i].id)) pool.push_back(i);

  std::vector<FinetuneResult> results;
  std::uint64_t cell = 0;
  for (double lr : cfg.lrs) {
    for (const auto& [name, steps] : cfg.schedules) {
      FinetuneResult r = finetune_cell(ckpt.state.q, ds, pool, m.multi_label, m.class_count, lr, steps, cfg,
                                       derive_seed(seed, {0x6674, cell++}));
      GridCell gc{"lr=" + nlohmann::json(lr).dump() + ",schedule=" + name, lr, steps, 0.0, r.diverged};
      if (!r.diverged) gc.val_score = finetune_score(r, ds, va, m.class_count, m.multi_label, nullptr, nullptr);
      rep.grid.push_back(gc);
      results.push_back(std::move(r));
    }
  }
  rep.selected = pick_best(rep.grid);
  rep.test_score = finetune_score(results[rep.selected], ds, te, m.class_count, m.multi_label, &rep.skipped_classes, &rep);
  return rep;
}

}  // namespace hpt
