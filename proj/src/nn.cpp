// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "hpt/nn.hpp"

#include <cmath>

#include "hpt/error.hpp"
#include "hpt/rng.hpp"

namespace hpt {

void EncoderConfig::validate() const {
  if (input_size == 0 || stage_widths.empty() || blocks_per_stage == 0 || embed_dim == 0 || proj_dim == 0)
    throw ConfigError("encoder config: all sizes must be positive");
  for (auto w : stage_widths)
    if (w == 0) throw ConfigError("encoder config: stage widths must be positive");
  const std::size_t factor = std::size_t{1} << stage_widths.size();
  if (input_size % factor != 0)
    throw ConfigError("encoder config: input_size " + std::to_string(input_size) + " not divisible by " +
                      std::to_string(factor));
}

// ---------------------------------------------------------------------------

std::size_t ParamSet::add(std::string name, Tensor t, ParamKind kind) {
  if (find(name)) throw ConfigError("duplicate parameter name " + name);
  entries_.push_back({std::move(name), std::move(t), kind});
  return entries_.size() - 1;
}

std::optional<std::size_t> ParamSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  return std::nullopt;
}

const ParamEntry& ParamSet::at(const std::string& name) const {
  auto i = find(name);
  if (!i) throw ConfigError("no parameter named " + name);
  return entries_[*i];
}

ParamEntry& ParamSet::at(const std::string& name) {
  auto i = find(name);
  if (!i) throw ConfigError("no parameter named " + name);
  return entries_[*i];
}

std::size_t ParamSet::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable()) n += e.tensor.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].name != b[i].name || a[i].kind != b[i].kind || !(a[i].tensor == b[i].tensor)) return false;
  return true;
}

// ---------------------------------------------------------------------------

BatchNormLayer add_batch_norm(ParamSet& params, const std::string& prefix, std::size_t channels) {
  BatchNormLayer l;
  l.channels = channels;
  l.gamma = params.add(prefix + ".gamma", Tensor({channels}, 1.0), ParamKind::bn_affine);
  l.beta = params.add(prefix + ".beta", Tensor({channels}, 0.0), ParamKind::bn_affine);
  l.running_mean = params.add(prefix + ".running_mean", Tensor({channels}, 0.0), ParamKind::bn_running);
  l.running_var = params.add(prefix + ".running_var", Tensor({channels}, 1.0), ParamKind::bn_running);
  return l;
}

Var batch_norm_apply(Graph& g, ParamSet& params, const BatchNormLayer& layer, Var x, Mode mode,
                     bool update_running) {
  if (x.shape().size() < 2 || x.shape()[1] != layer.channels)
    throw DimensionError("batch_norm_apply: input " + shape_str(x.shape()) + " does not have " +
                         std::to_string(layer.channels) + " channels");
  Var gamma = g.param(params[layer.gamma].tensor);
  Var beta = g.param(params[layer.beta].tensor);
  auto& rm = params[layer.running_mean].tensor;
  auto& rv = params[layer.running_var].tensor;
  if (mode == Mode::eval) return batch_norm_fixed(x, gamma, beta, rm.data(), rv.data(), layer.eps);
  BatchStats stats;
  Var y = batch_norm_train(x, gamma, beta, layer.eps, &stats);
  if (update_running) {
    for (std::size_t c = 0; c < layer.channels; ++c) {
      rm[c] = (1.0 - layer.rho) * rm[c] + layer.rho * stats.mean[c];
      rv[c] = (1.0 - layer.rho) * rv[c] + layer.rho * stats.var[c];
    }
  }
  return y;
}

Partition param_partition(const ParamSet& params, FreezePolicy policy) {
  Partition p;
  for (const auto& e : params) {
    if (!e.trainable()) continue;
    if (policy == FreezePolicy::none || e.bn_affine())
      p.trainable.insert(e.name);
    else
      p.frozen.insert(e.name);
  }
  return p;
}

std::string to_string(FreezePolicy p) { return p == FreezePolicy::none ? "none" : "bn_only"; }

FreezePolicy freeze_policy_from_string(const std::string& s) {
  if (s == "none") return FreezePolicy::none;
  if (s == "bn_only") return FreezePolicy::bn_only;
  throw ConfigError("unknown freeze policy '" + s + "' (expected none or bn_only)");
}

// ---------------------------------------------------------------------------

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = sd * rng.normal();
  return t;
}

}  // namespace

Encoder::Encoder(EncoderConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(derive_seed(seed, {0x656e63}));
  auto conv = [&](const std::string& name, std::size_t out, std::size_t in, std::size_t k) {
    return params_.add(name, he_normal({out, in, k, k}, in * k * k, rng), ParamKind::weight);
  };
  const auto& widths = cfg_.stage_widths;
  stem_conv_ = conv("backbone.stem.conv.weight", widths[0], 3, 3);
  stem_bn_ = add_batch_norm(params_, "backbone.stem.bn", widths[0]);

  std::size_t in = widths[0];
  for (std::size_t s = 0; s < widths.size(); ++s) {
    for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b) {
      const std::string p = "backbone.s" + std::to_string(s) + ".b" + std::to_string(b);
      const std::size_t out = widths[s];
      Block blk;
      blk.stride = (s > 0 && b == 0) ? 2 : 1;
      blk.conv1 = conv(p + ".conv1.weight", out, in, 3);
      blk.bn1 = add_batch_norm(params_, p + ".bn1", out);
      blk.conv2 = conv(p + ".conv2.weight", out, out, 3);
      blk.bn2 = add_batch_norm(params_, p + ".bn2", out);
      if (blk.stride != 1 || in != out) {
        blk.proj = conv(p + ".proj.weight", out, in, 1);
        blk.proj_bn = add_batch_norm(params_, p + ".proj_bn", out);
      }
      blocks_.push_back(blk);
      in = out;
    }
  }
  if (cfg_.embed_dim != in) {
    fc_w_ = params_.add("backbone.fc.weight", he_normal({cfg_.embed_dim, in}, in, rng), ParamKind::weight);
    fc_b_ = params_.add("backbone.fc.bias", Tensor({cfg_.embed_dim}, 0.0), ParamKind::weight);
  }
  const std::size_t d = cfg_.embed_dim;
  head1_w_ = params_.add("head.fc1.weight", he_normal({d, d}, d, rng), ParamKind::weight);
  head1_b_ = params_.add("head.fc1.bias", Tensor({d}, 0.0), ParamKind::weight);
  head2_w_ = params_.add("head.fc2.weight", he_normal({cfg_.proj_dim, d}, d, rng), ParamKind::weight);
  head2_b_ = params_.add("head.fc2.bias", Tensor({cfg_.proj_dim}, 0.0), ParamKind::weight);
}

Var Encoder::forward(Graph& g, Var images, const EmbedOptions& opts) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != cfg_.input_size || s[3] != cfg_.input_size)
    throw DimensionError("embed: expected N x 3 x " + std::to_string(cfg_.input_size) + " x " +
                         std::to_string(cfg_.input_size) + " images, got " + shape_str(s));
  auto bn = [&](const BatchNormLayer& l, Var x) {
    return batch_norm_apply(g, params_, l, x, opts.mode, opts.update_running);
  };
  auto w = [&](std::size_t idx) { return g.param(params_[idx].tensor); };

  Var x = relu(bn(stem_bn_, conv2d(images, w(stem_conv_), 1, 1)));
  x = max_pool2x2(x);
  for (const Block& b : blocks_) {
    Var h = relu(bn(b.bn1, conv2d(x, w(b.conv1), b.stride, 1)));
    h = bn(b.bn2, conv2d(h, w(b.conv2), 1, 1));
    Var skip = b.proj ? bn(b.proj_bn, conv2d(x, w(*b.proj), b.stride, 0)) : x;
    x = relu(add(h, skip));
  }
  x = global_avg_pool(x);
  if (fc_w_) x = linear(x, w(*fc_w_), w(*fc_b_));
  if (!opts.with_head) return x;
  Var h = relu(linear(x, w(head1_w_), w(head1_b_)));
  return linear(h, w(head2_w_), w(head2_b_));
}

Encoder build_encoder(const EncoderConfig& cfg, std::uint64_t seed) { return Encoder(cfg, seed); }

Tensor embed(Encoder& enc, const Tensor& images, const EmbedOptions& opts) {
  Graph g(false);
  Var out = enc.forward(g, g.constant_ref(images), opts);
  Tensor t = out.value();
  return t;
}

}  // namespace hpt
