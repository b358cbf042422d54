// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Gradient-check fixtures shared by the unit tests and the acceptance binary.
// Each case builds a scalar from one parameter tensor theta; everything else
// is a seeded constant. Losses are random linear read-outs of the op output so
// every output coordinate contributes.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hpt/autodiff.hpp"
#include "hpt/moco.hpp"
#include "hpt/nn.hpp"
#include "test_util.hpp"

namespace hpt::testing {

struct GradCase {
  std::string name;
  /// Runs finite_diff_check and returns the max relative error.
  std::function<double()> check;
};

inline GradCase make_case(std::string name, std::function<Var(Graph&, Tensor&)> build, Tensor theta) {
  auto t = std::make_shared<Tensor>(std::move(theta));
  return {std::move(name), [build = std::move(build), t] { return finite_diff_check(build, *t); }};
}

inline Var readout(Graph& g, Var y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, g.constant(random_tensor(y.shape(), rng))));
}

inline Tensor unit_rows(Tensor t) {
  const std::size_t n = t.dim(0), d = t.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += t.at(i, j) * t.at(i, j);
    s = std::sqrt(s);
    for (std::size_t j = 0; j < d; ++j) t.at(i, j) /= s;
  }
  return t;
}

/// Every differentiable op, once per differentiable argument, plus the full
/// encoder + InfoNCE composite.
inline std::vector<GradCase> grad_cases(std::uint64_t seed) {
  Rng rng(seed);
  auto R = [&](Shape s, double sc = 1.0) { return random_tensor(std::move(s), rng, sc); };
  const std::uint64_t ro = seed * 7919 + 1;
  std::vector<GradCase> c;

  {
    auto B = R({3, 4});
    c.push_back(make_case("matmul/a", [=](Graph& g, Tensor& t) { return readout(g, matmul(g.param(t), g.constant(B)), ro); },
                 R({2, 3})));
    auto A = R({2, 3});
    c.push_back(make_case("matmul/b", [=](Graph& g, Tensor& t) { return readout(g, matmul(g.constant(A), g.param(t)), ro); },
                 R({3, 4})));
  }
  c.push_back(make_case("transpose", [=](Graph& g, Tensor& t) { return readout(g, transpose(g.param(t)), ro); }, R({3, 5})));
  {
    auto B = R({2, 3});
    c.push_back(make_case("add", [=](Graph& g, Tensor& t) { return readout(g, add(g.param(t), g.constant(B)), ro); }, R({2, 3})));
    c.push_back(make_case("add/self", [=](Graph& g, Tensor& t) {
                   Var x = g.param(t);
                   return readout(g, add(x, x), ro);
                 },
                 R({2, 3})));
    c.push_back(make_case("mul", [=](Graph& g, Tensor& t) { return readout(g, mul(g.param(t), g.constant(B)), ro); }, R({2, 3})));
    c.push_back(make_case("mul/self", [=](Graph& g, Tensor& t) {
                   Var x = g.param(t);
                   return readout(g, mul(x, x), ro);
                 },
                 R({2, 3})));
  }
  c.push_back(make_case("scale", [=](Graph& g, Tensor& t) { return readout(g, scale(g.param(t), -1.7), ro); }, R({4})));
  c.push_back(make_case("relu", [=](Graph& g, Tensor& t) { return readout(g, relu(g.param(t)), ro); }, R({3, 4})));
  {
    auto W = R({3, 4}), b = R({3}), X = R({5, 4});
    c.push_back(make_case("linear/x", [=](Graph& g, Tensor& t) {
                   return readout(g, linear(g.param(t), g.constant(W), g.constant(b)), ro);
                 },
                 R({5, 4})));
    c.push_back(make_case("linear/w", [=](Graph& g, Tensor& t) {
                   return readout(g, linear(g.constant(X), g.param(t), g.constant(b)), ro);
                 },
                 R({3, 4})));
    c.push_back(make_case("linear/b", [=](Graph& g, Tensor& t) {
                   return readout(g, linear(g.constant(X), g.constant(W), g.param(t)), ro);
                 },
                 R({3})));
  }
  {
    auto W = R({3, 2, 3, 3}, 0.5), X = R({2, 2, 5, 5});
    c.push_back(make_case("conv2d/x", [=](Graph& g, Tensor& t) { return readout(g, conv2d(g.param(t), g.constant(W), 1, 1), ro); },
                 R({2, 2, 5, 5})));
    c.push_back(make_case("conv2d/w", [=](Graph& g, Tensor& t) { return readout(g, conv2d(g.constant(X), g.param(t), 2, 1), ro); },
                 R({3, 2, 3, 3}, 0.5)));
    auto W1 = R({4, 2, 1, 1});
    c.push_back(make_case("conv2d/1x1", [=](Graph& g, Tensor& t) {
                   return readout(g, conv2d(g.param(t), g.constant(W1), 2, 0), ro);
                 },
                 R({2, 2, 4, 4})));
  }
  c.push_back(make_case("max_pool2x2", [=](Graph& g, Tensor& t) { return readout(g, max_pool2x2(g.param(t)), ro); },
               R({2, 3, 4, 4})));
  c.push_back(make_case("global_avg_pool", [=](Graph& g, Tensor& t) { return readout(g, global_avg_pool(g.param(t)), ro); },
               R({2, 3, 3, 3})));
  {
    auto gamma = R({3}), beta = R({3}), X = R({4, 3, 2, 2});
    c.push_back(make_case("batch_norm_train/x", [=](Graph& g, Tensor& t) {
                   return readout(g, batch_norm_train(g.param(t), g.constant(gamma), g.constant(beta), 1e-5), ro);
                 },
                 R({4, 3, 2, 2})));
    c.push_back(make_case("batch_norm_train/2d", [=](Graph& g, Tensor& t) {
                   return readout(g, batch_norm_train(g.param(t), g.constant(gamma), g.constant(beta), 1e-5), ro);
                 },
                 R({5, 3})));
    c.push_back(make_case("batch_norm_train/gamma", [=](Graph& g, Tensor& t) {
                   return readout(g, batch_norm_train(g.constant(X), g.param(t), g.constant(beta), 1e-5), ro);
                 },
                 R({3})));
    c.push_back(make_case("batch_norm_train/beta", [=](Graph& g, Tensor& t) {
                   return readout(g, batch_norm_train(g.constant(X), g.constant(gamma), g.param(t), 1e-5), ro);
                 },
                 R({3})));
    std::vector<double> mu{0.3, -0.2, 0.1}, var{1.5, 0.7, 2.0};
    c.push_back(make_case("batch_norm_fixed/x", [=](Graph& g, Tensor& t) {
                   return readout(g, batch_norm_fixed(g.param(t), g.constant(gamma), g.constant(beta), mu, var, 1e-5),
                                  ro);
                 },
                 R({2, 3, 2, 2})));
    c.push_back(make_case("batch_norm_fixed/gamma", [=](Graph& g, Tensor& t) {
                   return readout(g, batch_norm_fixed(g.constant(X), g.param(t), g.constant(beta), mu, var, 1e-5),
                                  ro);
                 },
                 R({3})));
  }
  c.push_back(make_case("l2_normalize", [=](Graph& g, Tensor& t) { return readout(g, l2_normalize(g.param(t)), ro); },
               R({3, 4})));
  {
    auto B = R({3, 4});
    c.push_back(make_case("row_dot", [=](Graph& g, Tensor& t) { return readout(g, row_dot(g.param(t), g.constant(B)), ro); },
                 R({3, 4})));
  }
  c.push_back(make_case("log_softmax", [=](Graph& g, Tensor& t) { return readout(g, log_softmax(g.param(t)), ro); }, R({3, 5})));
  c.push_back(make_case("gather_rows", [=](Graph& g, Tensor& t) { return readout(g, gather_rows(g.param(t), {2, 0, 2}), ro); },
               R({3, 4})));
  c.push_back(make_case("pick", [=](Graph& g, Tensor& t) { return readout(g, pick(g.param(t), {1, 0, 3}), ro); }, R({3, 4})));
  {
    auto B = R({2, 3});
    c.push_back(make_case("concat/0", [=](Graph& g, Tensor& t) { return readout(g, concat({g.param(t), g.constant(B)}, 0), ro); },
                 R({1, 3})));
    c.push_back(make_case("concat/1", [=](Graph& g, Tensor& t) { return readout(g, concat({g.constant(B), g.param(t)}, 1), ro); },
                 R({2, 2})));
  }
  c.push_back(make_case("sum", [=](Graph& g, Tensor& t) { return scale(sum(g.param(t)), 0.7); }, R({2, 3})));
  c.push_back(make_case("mean", [=](Graph& g, Tensor& t) { return readout(g, mean(g.param(t)), ro); }, R({2, 3})));
  {
    Tensor targets({3, 4});
    for (std::size_t i = 0; i < targets.numel(); ++i) targets[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    c.push_back(make_case("sigmoid_bce", [=](Graph& g, Tensor& t) { return sigmoid_bce(g.param(t), targets); },
                 R({3, 4}, 3.0)));
  }
  {
    auto K = unit_rows(R({3, 4}));
    auto Qs = unit_rows(R({8, 4}));
    c.push_back(make_case("info_nce/q", [=](Graph& g, Tensor& t) {
                   return info_nce_loss(l2_normalize(g.param(t)), g.constant(K), Qs, 0.2);
                 },
                 R({3, 4})));
  }
  // Composite: whole encoder in train mode with the projection head and
  // InfoNCE, checked against every trainable tensor in turn.
  {
    const EncoderConfig ec = tiny_encoder();
    auto enc = std::make_shared<Encoder>(ec, seed);
    auto images = std::make_shared<Tensor>(R({4, 3, ec.input_size, ec.input_size}, 0.5));
    auto K = unit_rows(R({4, ec.proj_dim}));
    auto Qs = unit_rows(R({8, ec.proj_dim}));
    c.push_back({"encoder+info_nce", [=] {
                   auto build = [&](Graph& g, Tensor&) {
                     Var out = enc->forward(g, g.constant_ref(*images), {Mode::train, true, false});
                     return info_nce_loss(l2_normalize(out), g.constant(K), Qs, 0.2);
                   };
                   // Many ReLU and max-pool kinks: a smaller step keeps the
                   // central difference on one side of them.
                   double worst = 0.0;
                   for (auto& e : enc->params())
                     if (e.trainable()) worst = std::max(worst, finite_diff_check(build, e.tensor, 1e-6));
                   return worst;
                 }});
  }
  return c;
}

}  // namespace hpt::testing
