// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "hpt/moco.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <cstdlib>
#include <numbers>
#include <sstream>
#include <thread>

#include "hpt/error.hpp"
#include "hpt/rng.hpp"

namespace hpt {

MoCoConfig MoCoConfig::full_scale() {
  MoCoConfig c;
  c.proj_dim = 128;
  c.queue_size = 65536;
  c.momentum = 0.999;
  c.temperature = 0.2;
  c.lr = 0.03;
  c.sgd_momentum = 0.9;
  c.weight_decay = 1e-4;
  c.batch_size = 256;
  return c;
}

void MoCoConfig::validate() const {
  if (batch_size == 0 || queue_size == 0 || proj_dim == 0) throw ConfigError("moco: sizes must be positive");
  if (queue_size % batch_size != 0)
    throw ConfigError("moco: queue size " + std::to_string(queue_size) + " is not a multiple of batch size " +
                      std::to_string(batch_size));
  if (!(temperature > 0)) throw ConfigError("moco: temperature must be positive");
  if (!(momentum >= 0 && momentum <= 1)) throw ConfigError("moco: momentum must lie in [0, 1]");
  if (!(lr >= 0) || !(sgd_momentum >= 0) || !(weight_decay >= 0))
    throw ConfigError("moco: lr, sgd_momentum and weight_decay must be non-negative");
}

std::string to_string(KeyBnMode m) { return m == KeyBnMode::eval ? "eval" : "train"; }

KeyBnMode key_bn_mode_from_string(const std::string& s) {
  if (s == "eval") return KeyBnMode::eval;
  if (s == "train") return KeyBnMode::train;
  throw ConfigError("unknown key_bn_mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// Queue

namespace {

void check_unit_rows(const Tensor& t, double tol, const char* what) {
  const std::size_t n = t.dim(0), d = t.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += t.at(i, j) * t.at(i, j);
    if (std::abs(std::sqrt(s) - 1.0) > tol)
      throw ContractError(std::string(what) + ": row " + std::to_string(i) + " is not unit norm");
  }
}

}  // namespace

Queue::Queue(std::size_t capacity, std::size_t dim, std::uint64_t seed) : buffer_({capacity, dim}) {
  Rng rng(derive_seed(seed, {0x7175657565}));
  for (std::size_t i = 0; i < capacity; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      buffer_.at(i, j) = rng.normal();
      s += buffer_.at(i, j) * buffer_.at(i, j);
    }
    const double n = std::sqrt(s);
    for (std::size_t j = 0; j < dim; ++j) buffer_.at(i, j) /= n;
  }
}

Queue::Queue(Tensor buffer, std::size_t ptr) : buffer_(std::move(buffer)), ptr_(ptr) {
  if (buffer_.ndim() != 2) throw DimensionError("queue buffer must be K x dim");
  if (ptr_ >= capacity()) throw ContractError("queue pointer out of range");
}

void Queue::push(const Tensor& keys) {
  if (keys.ndim() != 2 || keys.dim(1) != dim())
    throw DimensionError("queue_push: keys " + shape_str(keys.shape()) + " do not match queue dim " +
                         std::to_string(dim()));
  const std::size_t n = keys.dim(0), K = capacity();
  if (n > K) throw ContractError("queue_push: " + std::to_string(n) + " keys exceed capacity " + std::to_string(K));
  check_unit_rows(keys, 1e-6, "queue_push");
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t row = (ptr_ + i) % K;
    for (std::size_t j = 0; j < dim(); ++j) buffer_.at(row, j) = keys.at(i, j);
  }
  ptr_ = (ptr_ + n) % K;
}

// ---------------------------------------------------------------------------

MoCoState init_state(const MoCoConfig& cfg, const EncoderConfig& enc_cfg, std::uint64_t seed) {
  Encoder q(enc_cfg, seed);
  Encoder k = q;
  return init_state(cfg, std::move(q), std::move(k), seed);
}

MoCoState init_state(const MoCoConfig& cfg, Encoder q, Encoder k, std::uint64_t queue_seed) {
  cfg.validate();
  if (cfg.proj_dim != q.config().proj_dim)
    throw ConfigError("moco proj_dim " + std::to_string(cfg.proj_dim) + " differs from encoder proj_dim " +
                      std::to_string(q.config().proj_dim));
  if (!(q.config() == k.config())) throw ConfigError("query and key encoders differ in architecture");
  MoCoState s;
  s.cfg = cfg;
  s.q = std::move(q);
  s.k = std::move(k);
  s.queue = Queue(cfg.queue_size, cfg.proj_dim, queue_seed);
  s.velocity.resize(s.q.params().size());
  return s;
}

Var info_nce_loss(Var q, Var k_pos, const Tensor& queue, double tau) {
  if (!(tau > 0)) throw ContractError("info_nce_loss: temperature must be positive");
  const Tensor& Q = q.value();
  if (Q.ndim() != 2 || !(Q.shape() == k_pos.value().shape()) || queue.ndim() != 2 || queue.dim(1) != Q.dim(1))
    throw DimensionError("info_nce_loss: shapes " + shape_str(Q.shape()) + ", " + shape_str(k_pos.shape()) +
                         ", queue " + shape_str(queue.shape()) + " disagree");
  check_unit_rows(Q, 1e-6, "info_nce_loss(q)");
  check_unit_rows(k_pos.value(), 1e-6, "info_nce_loss(k)");
  check_unit_rows(queue, 1e-6, "info_nce_loss(queue)");
  // Q aliases graph storage that the ops below may reallocate.
  const std::vector<std::size_t> zeros(Q.dim(0), 0);
  Graph& g = *q.graph;
  Tensor qt({queue.dim(1), queue.dim(0)});
  for (std::size_t i = 0; i < queue.dim(0); ++i)
    for (std::size_t j = 0; j < queue.dim(1); ++j) qt.at(j, i) = queue.at(i, j);
  Var pos = row_dot(q, k_pos);
  Var neg = matmul(q, g.constant(std::move(qt)));
  Var logits = scale(concat({pos, neg}, 1), 1.0 / tau);
  return scale(mean(pick(log_softmax(logits), zeros)), -1.0);
}

void momentum_update(const ParamSet& q, ParamSet& k, double m) {
  if (q.size() != k.size()) throw ContractError("momentum_update: parameter sets differ in size");
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i].name != k[i].name || q[i].tensor.shape() != k[i].tensor.shape())
      throw ContractError("momentum_update: entry mismatch " + q[i].name + " vs " + k[i].name);
  }
  for (std::size_t i = 0; i < q.size(); ++i) {
    auto qd = q[i].tensor.data();
    auto kd = k[i].tensor.data();
    for (std::size_t j = 0; j < kd.size(); ++j) kd[j] = m * kd[j] + (1.0 - m) * qd[j];
  }
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
  if (step > total_steps)
    throw ContractError("cosine_lr: step " + std::to_string(step) + " beyond total " + std::to_string(total_steps));
  if (total_steps == 0) return lr0;
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

namespace {
std::atomic<std::size_t> g_worker_cap{std::numeric_limits<std::size_t>::max()};
}

void set_worker_cap(std::size_t cap) { g_worker_cap = std::max<std::size_t>(cap, 1); }

std::size_t worker_count() {
  std::size_t n = 1;
  if (const char* env = std::getenv("HPT_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<std::size_t>(v);
  }
  return std::min(n, g_worker_cap.load());
}

std::pair<Tensor, Tensor> make_view_pair_batch(const std::vector<const Image*>& batch, const Policy& policy,
                                               const StepStreams& streams, std::size_t step) {
  const std::size_t n = batch.size();
  std::vector<Image> a(n), b(n);
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      a[i] = sample_view(*batch[i], policy, view_stream(streams.seed, streams.stage, step, i, 0));
      b[i] = sample_view(*batch[i], policy, view_stream(streams.seed, streams.stage, step, i, 1));
    }
  };
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w * chunk, std::min(n, (w + 1) * chunk));
    for (auto& t : pool) t.join();
  }
  std::vector<const Image*> pa, pb;
  for (std::size_t i = 0; i < n; ++i) {
    pa.push_back(&a[i]);
    pb.push_back(&b[i]);
  }
  return {stack_images(pa), stack_images(pb)};
}

double train_step(MoCoState& state, const std::vector<const Image*>& batch, const Policy& policy,
                  const std::set<std::string>& frozen, const StepStreams& streams, const EngineFlags& flags,
                  bool bn_only_stage) {
  const MoCoConfig& cfg = state.cfg;
  if (batch.size() != cfg.batch_size)
    throw ContractError("train_step: batch of " + std::to_string(batch.size()) + " images, expected " +
                        std::to_string(cfg.batch_size));
  auto [view_a, view_b] = make_view_pair_batch(batch, policy, streams, state.step);

  ParamSet& qp = state.q.params();
  for (auto& e : qp) {
    e.tensor.set_requires_grad(e.trainable() && !frozen.count(e.name));
    e.tensor.drop_grad();
  }
  const bool update_running = !bn_only_stage || flags.bn_stage_updates_running_stats;

  Tensor keys;
  {
    Graph kg(false);
    Var k = state.k.forward(kg, kg.constant_ref(view_b),
                            {flags.key_bn_mode == KeyBnMode::eval ? Mode::eval : Mode::train, true, true});
    keys = l2_normalize(k).value();
  }

  double loss_value;
  {
    Graph g;
    Var q = l2_normalize(state.q.forward(g, g.constant_ref(view_a), {Mode::train, true, update_running}));
    Var loss = info_nce_loss(q, g.constant_ref(keys), state.queue.buffer(), cfg.temperature);
    loss_value = loss.value().item();
    if (!std::isfinite(loss_value)) {
      std::ostringstream msg;
      msg << "non-finite InfoNCE loss at step " << state.step << " (lr "
          << cosine_lr(state.step, std::max(cfg.total_steps, state.step), cfg.lr) << ")";
      throw NumericError(msg.str());
    }
    g.backward(loss);
  }

  const double lr = cosine_lr(std::min(state.step, cfg.total_steps), cfg.total_steps, cfg.lr);
  for (std::size_t i = 0; i < qp.size(); ++i) {
    Tensor& t = qp[i].tensor;
    if (!t.requires_grad()) continue;
    auto grad = t.grad();
    auto data = t.data();
    auto& v = state.velocity[i];
    if (v.empty()) v.assign(data.size(), 0.0);
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double gj = grad[j] + cfg.weight_decay * data[j];
      v[j] = cfg.sgd_momentum * v[j] + gj;
      data[j] -= lr * v[j];
    }
  }
  for (auto& e : qp) {
    e.tensor.drop_grad();
    e.tensor.set_requires_grad(false);
  }
  if (!bn_only_stage || flags.ema_during_bn_stages) momentum_update(qp, state.k.params(), cfg.momentum);
  state.queue.push(keys);
  ++state.step;
  return loss_value;
}

}  // namespace hpt
