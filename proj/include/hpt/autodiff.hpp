// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "hpt/tensor.hpp"

namespace hpt {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Append-only tape of operations. Node ids are assigned in insertion order,
/// which is also a topological order, so backward is a single reverse sweep.
///
/// A graph built with record=false evaluates ops eagerly without saving
/// anything for backward (key encoder, evaluation, BN refresh).
class Graph {
public:
  /// Called during backward with the id of the node whose output gradient is
  /// complete; it accumulates into its inputs through grad_acc().
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  /// Leaf bound to an external tensor; gradients land in t.grad on backward.
  /// Requires grad iff the graph records and t.requires_grad().
  Var param(Tensor& t);
  /// Owned leaf that never requires grad.
  Var constant(Tensor t);
  /// Non-owning constant leaf; t must outlive the graph.
  Var constant_ref(const Tensor& t);

  /// Adds an interior node. It requires grad iff any input does and the graph
  /// records; otherwise fn is dropped.
  Var add_node(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Output gradient of a node during backward (empty if nothing reached it).
  std::span<const double> grad(std::size_t id) const { return grads_[id]; }
  /// Gradient accumulator of an input node, zero-allocated on first use.
  std::span<double> grad_acc(std::size_t id);

  /// Reverse sweep from a scalar loss. Leaf gradients are added to the bound
  /// tensors' grad buffers, so two calls accumulate; every requires-grad leaf
  /// ends with an allocated (possibly zero) gradient.
  void backward(Var loss);

private:
  struct Node {
    Tensor owned;
    Tensor* leaf = nullptr;
    const Tensor* const_leaf = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool record_;
};

// Element-wise and linear algebra.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
/// y = x * w^T + b with x N x in, w out x in, b [out].
Var linear(Var x, Var w, Var b);

// Convolutional pieces (NCHW).
Var conv2d(Var x, Var w, std::size_t stride, std::size_t pad);
Var max_pool2x2(Var x);
Var global_avg_pool(Var x);

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased
};
/// Normalizes with batch statistics over (N, H, W) per channel. Works on
/// N x C and N x C x H x W inputs. If stats is non-null it receives them.
Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats = nullptr);
/// Normalizes with fixed statistics (treated as constants).
Var batch_norm_fixed(Var x, Var gamma, Var beta, std::span<const double> mean,
                     std::span<const double> var, double eps);

// Row-wise pieces for the embedding head and losses (2-D inputs).
inline constexpr double kNormEpsilon = 1e-12;
Var l2_normalize(Var x);
Var row_dot(Var a, Var b);
Var log_softmax(Var x);
Var gather_rows(Var x, const std::vector<std::size_t>& rows);
Var pick(Var x, const std::vector<std::size_t>& cols);
Var concat(const std::vector<Var>& parts, std::size_t dim);
Var sum(Var x);
Var mean(Var x);
/// Mean over all entries of the numerically stable sigmoid cross-entropy.
Var sigmoid_bce(Var logits, const Tensor& targets);

/// Central finite differences against reverse mode for every coordinate of
/// theta. build() must register theta via Graph::param and return a scalar.
/// Returns max_i |g_ad - g_fd| / max(1, |g_fd|).
double finite_diff_check(const std::function<Var(Graph&, Tensor&)>& build, Tensor& theta,
                         double eps = 1e-5);

}  // namespace hpt
