// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "hpt/augment.hpp"
#include "hpt/autodiff.hpp"
#include "hpt/image.hpp"
#include "hpt/nn.hpp"

namespace hpt {

struct MoCoConfig {
  std::size_t proj_dim = 32;
  std::size_t queue_size = 1024;
  double momentum = 0.999;
  double temperature = 0.2;
  /// Linear scaling of the 0.03 @ batch 256 operating point.
  double lr = 0.03 * 64.0 / 256.0;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 64;
  std::size_t total_steps = 500;

  /// Reference values of the full-scale recipe (dim 128, K 65536, m 0.999,
  /// t 0.2, lr 0.03, batch 256).
  static MoCoConfig full_scale();
  void validate() const;
  friend bool operator==(const MoCoConfig&, const MoCoConfig&) = default;
};

enum class KeyBnMode { eval, train };

std::string to_string(KeyBnMode m);
KeyBnMode key_bn_mode_from_string(const std::string& s);

/// Switches that the source recipe leaves open; recorded with every run.
struct EngineFlags {
  /// eval: the key encoder normalizes with its EMA running stats (stands in
  /// for shuffled BN). train: batch statistics.
  KeyBnMode key_bn_mode = KeyBnMode::eval;
  /// Whether train-mode forwards in bn_only stages move the running stats.
  bool bn_stage_updates_running_stats = true;
  /// Whether the key encoder EMA runs during bn_only stages.
  bool ema_during_bn_stages = true;
  friend bool operator==(const EngineFlags&, const EngineFlags&) = default;
};

/// FIFO ring of K unit-norm keys.
class Queue {
public:
  Queue() = default;
  /// Seeded random unit vectors.
  Queue(std::size_t capacity, std::size_t dim, std::uint64_t seed);
  Queue(Tensor buffer, std::size_t ptr);

  std::size_t capacity() const { return buffer_.dim(0); }
  std::size_t dim() const { return buffer_.dim(1); }
  std::size_t ptr() const { return ptr_; }
  const Tensor& buffer() const { return buffer_; }

  /// Overwrites rows ptr .. ptr + N (mod K) and advances ptr by N.
  void push(const Tensor& keys);

  friend bool operator==(const Queue&, const Queue&) = default;

private:
  Tensor buffer_;
  std::size_t ptr_ = 0;
};

struct MoCoState {
  MoCoConfig cfg;
  Encoder q;
  Encoder k;
  Queue queue;
  std::size_t step = 0;
  /// SGD momentum buffers, aligned with q.params(); empty for entries that
  /// never trained.
  std::vector<std::vector<double>> velocity;
};

/// q from seed, k an exact copy, queue of random unit keys.
MoCoState init_state(const MoCoConfig& cfg, const EncoderConfig& enc_cfg, std::uint64_t seed);

/// Starts a fresh engine (queue, velocity, step) around existing encoders.
MoCoState init_state(const MoCoConfig& cfg, Encoder q, Encoder k, std::uint64_t queue_seed);

/// Mean over rows of -log softmax([q.k_pos, q.queue_1, ..., q.queue_K] / tau)[0].
/// Rows of q, k_pos and the queue must be unit norm within 1e-6.
Var info_nce_loss(Var q, Var k_pos, const Tensor& queue, double tau);

/// theta_k <- m theta_k + (1 - m) theta_q for every entry, running stats included.
void momentum_update(const ParamSet& q, ParamSet& k, double m);

/// lr0 * 0.5 * (1 + cos(pi step / total)).
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

/// Where a training step draws its randomness from.
struct StepStreams {
  std::uint64_t seed = 0;
  std::uint64_t stage = 0;
};

/// One MoCo step: two views per image, query forward with grad, key forward
/// without, InfoNCE, SGD (momentum, L2 weight decay added to the gradient)
/// on entries not in frozen, then EMA of k, then enqueue keys. Returns the
/// loss. Throws NumericError on a non-finite loss.
double train_step(MoCoState& state, const std::vector<const Image*>& batch, const Policy& policy,
                  const std::set<std::string>& frozen, const StepStreams& streams, const EngineFlags& flags = {},
                  bool bn_only_stage = false);

/// Number of worker threads for view preparation: HPT_THREADS (default 1),
/// capped by set_worker_cap.
std::size_t worker_count();
void set_worker_cap(std::size_t cap);

/// Two augmented views per image, keyed per example so the result does not
/// depend on the worker count.
std::pair<Tensor, Tensor> make_view_pair_batch(const std::vector<const Image*>& batch, const Policy& policy,
                                               const StepStreams& streams, std::size_t step);

}  // namespace hpt
