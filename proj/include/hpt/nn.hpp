// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hpt/autodiff.hpp"
#include "hpt/tensor.hpp"

namespace hpt {

struct EncoderConfig {
  std::size_t input_size = 32;
  std::vector<std::size_t> stage_widths{16, 32, 64};
  std::size_t blocks_per_stage = 1;
  std::size_t embed_dim = 64;
  std::size_t proj_dim = 32;

  /// Throws ConfigError. input_size must be divisible by 2^len(stage_widths)
  /// (one 2x2 pool after the stem plus one stride-2 block per later stage).
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

enum class ParamKind : std::uint8_t {
  weight,      // conv / linear weights and biases
  bn_affine,   // gamma, beta
  bn_running,  // running mean / variance; never trainable
};

struct ParamEntry {
  std::string name;
  Tensor tensor;
  ParamKind kind = ParamKind::weight;

  bool bn_affine() const { return kind == ParamKind::bn_affine; }
  bool trainable() const { return kind != ParamKind::bn_running; }
};

/// Ordered, name-unique collection of every tensor of a model.
class ParamSet {
public:
  std::size_t add(std::string name, Tensor t, ParamKind kind);

  std::size_t size() const { return entries_.size(); }
  ParamEntry& operator[](std::size_t i) { return entries_[i]; }
  const ParamEntry& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::optional<std::size_t> find(const std::string& name) const;
  const ParamEntry& at(const std::string& name) const;
  ParamEntry& at(const std::string& name);

  /// Scalar count over trainable entries (weights + BN affine).
  std::size_t trainable_scalar_count() const;
  void zero_grad();

  friend bool operator==(const ParamSet& a, const ParamSet& b);

private:
  std::vector<ParamEntry> entries_;
};

enum class Mode { train, eval };

/// Indices of one batch-norm layer's four entries inside a ParamSet.
struct BatchNormLayer {
  std::size_t gamma = 0, beta = 0, running_mean = 0, running_var = 0;
  std::size_t channels = 0;
  double eps = 1e-5;
  double rho = 0.1;
};

BatchNormLayer add_batch_norm(ParamSet& params, const std::string& prefix, std::size_t channels);

/// Train mode normalizes by biased batch statistics and, if update_running is
/// set, moves running stats by run <- (1 - rho) run + rho batch. Eval mode
/// normalizes by the running stats and mutates nothing.
Var batch_norm_apply(Graph& g, ParamSet& params, const BatchNormLayer& layer, Var x, Mode mode,
                     bool update_running = true);

enum class FreezePolicy { none, bn_only };

struct Partition {
  std::set<std::string> trainable;
  std::set<std::string> frozen;
};

/// Splits the trainable-kind entries. Running statistics appear in neither set.
Partition param_partition(const ParamSet& params, FreezePolicy policy);

std::string to_string(FreezePolicy p);
FreezePolicy freeze_policy_from_string(const std::string& s);

struct EmbedOptions {
  Mode mode = Mode::eval;
  bool with_head = false;
  bool update_running = true;
};

/// Micro-ResNet: conv3x3-BN-relu stem, 2x2 max pool, residual stages
/// (conv-BN-relu-conv-BN + skip, 1x1 conv-BN projection when the shape
/// changes), global average pool, optional linear to embed_dim, and a
/// linear-relu-linear projection head.
class Encoder {
public:
  Encoder() = default;
  Encoder(EncoderConfig cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  /// images: N x 3 x S x S with S = input_size. Returns N x embed_dim, or
  /// N x proj_dim with the head.
  Var forward(Graph& g, Var images, const EmbedOptions& opts);

private:
  struct Block {
    std::size_t conv1, conv2;
    BatchNormLayer bn1, bn2;
    std::optional<std::size_t> proj;
    BatchNormLayer proj_bn;
    std::size_t stride = 1;
  };

  EncoderConfig cfg_;
  ParamSet params_;
  std::size_t stem_conv_ = 0;
  BatchNormLayer stem_bn_;
  std::vector<Block> blocks_;
  std::optional<std::size_t> fc_w_, fc_b_;
  std::size_t head1_w_ = 0, head1_b_ = 0, head2_w_ = 0, head2_b_ = 0;
};

/// Deterministic He fan-in init from seed; gamma = 1, beta = 0, running mean 0
/// and variance 1.
Encoder build_encoder(const EncoderConfig& cfg, std::uint64_t seed);

/// Runs embed on a batch of images without recording a graph.
Tensor embed(Encoder& enc, const Tensor& images, const EmbedOptions& opts);

}  // namespace hpt
