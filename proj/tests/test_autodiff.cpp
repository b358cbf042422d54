// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "grad_cases.hpp"
#include "hpt/autodiff.hpp"
#include "hpt/error.hpp"
#include "test_util.hpp"

namespace hpt {
namespace {

using testing::random_tensor;

TEST(Tensor, SizeMatchesShape) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Rng rng(3);
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1;
  const Tensor b = random_tensor({3, 5}, rng);
  Graph g(false);
  EXPECT_EQ(matmul(g.constant(eye), g.constant(b)).value(), b);
}

TEST(Matmul, HandProduct) {
  Graph g(false);
  Var y = matmul(g.constant(Tensor({2, 2}, {1, 2, 3, 4})), g.constant(Tensor({2, 1}, {5, 6})));
  EXPECT_EQ(y.value(), Tensor({2, 1}, {17, 39}));
}

TEST(Matmul, InnerMismatchNamesBothShapes) {
  Graph g(false);
  try {
    matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({2, 3})));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] x [2x3]"), std::string::npos) << e.what();
  }
}

TEST(Matmul, LargeProductMatchesNaiveSum) {
  Rng rng(11);
  const Tensor a = random_tensor({37, 70}, rng), b = random_tensor({70, 29}, rng);
  Graph g(false);
  const Tensor y = matmul(g.constant(a), g.constant(b)).value();
  for (std::size_t i = 0; i < 37; ++i)
    for (std::size_t j = 0; j < 29; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 70; ++k) s += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(y.at(i, j), s, 1e-12);
    }
}

TEST(Conv2d, OneByOneUnitKernelSumsChannels) {
  Rng rng(5);
  const Tensor x = random_tensor({2, 3, 4, 4}, rng);
  Graph g(false);
  const Tensor y = conv2d(g.constant(x), g.constant(Tensor({1, 3, 1, 1}, 1.0)), 1, 0).value();
  ASSERT_EQ(y.shape(), (Shape{2, 1, 4, 4}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < 16; ++p)
      EXPECT_DOUBLE_EQ(y[n * 16 + p], x[n * 48 + p] + x[n * 48 + 16 + p] + x[n * 48 + 32 + p]);
}

TEST(Conv2d, AllOnesGivesNineTimesChannels) {
  Graph g(false);
  const Tensor y = conv2d(g.constant(Tensor({1, 2, 3, 3}, 1.0)), g.constant(Tensor({1, 2, 3, 3}, 1.0)), 1, 0).value();
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 18.0);
}

TEST(Conv2d, OutputSizeFormula) {
  Graph g(false);
  const Tensor y = conv2d(g.constant(Tensor({1, 1, 7, 6})), g.constant(Tensor({2, 1, 3, 3})), 2, 1).value();
  EXPECT_EQ(y.shape(), (Shape{1, 2, 4, 3}));
}

TEST(Conv2d, KernelLargerThanInput) {
  Graph g(false);
  EXPECT_THROW(conv2d(g.constant(Tensor({1, 1, 3, 3})), g.constant(Tensor({1, 1, 5, 5})), 1, 0), DimensionError);
}

TEST(L2Normalize, ThreeFour) {
  Graph g(false);
  const Tensor y = l2_normalize(g.constant(Tensor({1, 2}, {3, 4}))).value();
  EXPECT_NEAR(y[0], 0.6, 1e-15);
  EXPECT_NEAR(y[1], 0.8, 1e-15);
}

TEST(L2Normalize, UnitRowUnchanged) {
  Graph g(false);
  const Tensor x({1, 3}, {0.6, 0.0, 0.8});
  const Tensor y = l2_normalize(g.constant(x)).value();
  EXPECT_LE(testing::max_abs_diff(x, y), 1e-12);
}

TEST(L2Normalize, ZeroRowIsDegenerate) {
  Graph g(false);
  EXPECT_THROW(l2_normalize(g.constant(Tensor({2, 3}, {1, 0, 0, 0, 0, 0}))), DegenerateEmbeddingError);
}

TEST(L2Normalize, IdempotentProperty) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    Graph g(false);
    const Tensor once = l2_normalize(g.constant(random_tensor({5, 7}, rng))).value();
    const Tensor twice = l2_normalize(g.constant(once)).value();
    EXPECT_LE(testing::max_abs_diff(once, twice), 1e-15);
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) s += once.at(i, j) * once.at(i, j);
      EXPECT_NEAR(std::sqrt(s), 1.0, 1e-12);
    }
  }
}

TEST(Backward, ProductRule) {
  Tensor x = Tensor::scalar(3.0), y = Tensor::scalar(-2.5);
  x.set_requires_grad(true);
  y.set_requires_grad(true);
  Graph g;
  g.backward(mul(g.param(x), g.param(y)));
  EXPECT_EQ(x.grad()[0], -2.5);
  EXPECT_EQ(y.grad()[0], 3.0);
}

TEST(Backward, SumReluMatchesFiniteDifferences) {
  Rng rng(9);
  const Tensor x = random_tensor({4, 1}, rng);
  Tensor w = random_tensor({3, 4}, rng);
  const double err = finite_diff_check(
      [&](Graph& g, Tensor& t) { return sum(relu(matmul(g.param(t), g.constant(x)))); }, w);
  EXPECT_LT(err, 1e-4);
}

TEST(Backward, UnreachableParameterGetsZero) {
  Tensor a = Tensor::scalar(2.0), b({2}, 5.0);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Graph g;
  Var loss = scale(g.param(a), 3.0);
  g.param(b);
  g.backward(loss);
  ASSERT_TRUE(b.has_grad());
  EXPECT_EQ(b.grad()[0], 0.0);
  EXPECT_EQ(b.grad()[1], 0.0);
}

TEST(Backward, NonScalarLossRejected) {
  Tensor a({2}, 1.0);
  a.set_requires_grad(true);
  Graph g;
  EXPECT_THROW(g.backward(g.param(a)), ContractError);
}

TEST(Backward, TwoCallsAccumulateAndResetZeroes) {
  Tensor a({3}, {1, 2, 3});
  a.set_requires_grad(true);
  for (int rep = 0; rep < 2; ++rep) {
    Graph g;
    g.backward(sum(mul(g.param(a), g.param(a))));
  }
  EXPECT_EQ(a.grad()[2], 12.0);  // 2 * (2 * 3)
  a.zero_grad();
  for (double v : a.grad()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, NoRecordGraphKeepsNoGradient) {
  Tensor a({2}, 1.0);
  a.set_requires_grad(true);
  Graph g(false);
  Var y = sum(g.param(a));
  EXPECT_FALSE(g.requires_grad(y.id));
}

TEST(Forward, BitIdenticalAcrossRuns) {
  Rng rng(2);
  const Tensor x = random_tensor({3, 2, 6, 6}, rng), w = random_tensor({4, 2, 3, 3}, rng);
  auto run = [&] {
    Graph g(false);
    return log_softmax(global_avg_pool(relu(conv2d(g.constant(x), g.constant(w), 1, 1)))).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(FiniteDiff, LinearFunctionIsExact) {
  Rng rng(1);
  Tensor w = random_tensor({6}, rng);
  const Tensor c = random_tensor({6}, rng);
  const double err =
      finite_diff_check([&](Graph& g, Tensor& t) { return sum(mul(g.param(t), g.constant(c))); }, w);
  EXPECT_LT(err, 1e-8);
}

TEST(FiniteDiff, RejectsBadEpsilon) {
  Tensor w({1}, 1.0);
  auto f = [](Graph& g, Tensor& t) { return sum(g.param(t)); };
  EXPECT_THROW(finite_diff_check(f, w, 0.0), ContractError);
  EXPECT_THROW(finite_diff_check(f, w, 0.1), ContractError);
}

TEST(FiniteDiff, NonFiniteOutputIsNumericError) {
  auto f = [](Graph& g, Tensor& t) {
    Var x = g.param(t);
    return sum(log_softmax(concat({scale(x, INFINITY), x}, 1)));
  };
  Tensor w2({1, 1}, 0.0);
  EXPECT_THROW(finite_diff_check(f, w2), NumericError);
}

// A relu whose backward is off by a factor must be caught.
Var bad_relu(Var x) {
  Tensor y = x.value();
  for (auto& v : y.storage()) v = std::max(v, 0.0);
  return x.graph->add_node(std::move(y), {x.id}, [in = x.id](Graph& g, std::size_t self) {
    auto dy = g.grad(self);
    auto dx = g.grad_acc(in);
    const Tensor& xv = g.value(in);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += xv[i] > 0 ? 1.5 * dy[i] : 0.0;
  });
}

TEST(FiniteDiff, DetectsCorruptedKernel) {
  Rng rng(4);
  Tensor w = random_tensor({3, 4}, rng);
  const double err = finite_diff_check([](Graph& g, Tensor& t) { return sum(bad_relu(g.param(t))); }, w);
  EXPECT_GT(err, 1e-2);
}

class GradCheck : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GradCheck, EveryOpBelowTolerance) {
  for (const auto& c : testing::grad_cases(GetParam())) {
    double err = 1.0;
    try {
      err = c.check();
    } catch (const std::exception& e) {
      ADD_FAILURE() << c.name << ": " << e.what();
    }
    EXPECT_LT(err, 1e-4) << c.name << " seed " << GetParam();
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradCheck, ::testing::Range<std::uint64_t>(0, 10));

}  // namespace
}  // namespace hpt
