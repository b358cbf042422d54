// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "json.hpp"

#include "hpt/tensor.hpp"

namespace hpt {

/// |E_A & E_B| / |E_A | E_B| over the misclassified sets; 1 when both are empty.
double error_iou(const std::vector<std::size_t>& preds_a, const std::vector<std::size_t>& preds_b,
                 const std::vector<std::size_t>& labels);

/// Modified RV coefficient of two activation matrices over the same n rows.
/// Throws DegenerateError when either diagonal-free Gram matrix is zero.
double rv2(const Tensor& a, const Tensor& b);

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p = 1.0;
};

/// Two-sided Welch test. Needs n >= 2 per sample and non-zero variance in at
/// least one; identical means give t = 0, p = 1.
WelchResult welch_t(const std::vector<double>& a, const std::vector<double>& b);

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);

/// P(T <= t) for Student's t with nu degrees of freedom.
double student_t_cdf(double t, double nu);

struct ActivationMatrix {
  Tensor values;  // n x p
  nlohmann::ordered_json provenance = nlohmann::ordered_json::object();
};

/// "HPTACTS1" | u64 n | u64 p | n*p little-endian f64 | JSON provenance.
void save_activations(const ActivationMatrix& m, const std::filesystem::path& path);
ActivationMatrix load_activations(const std::filesystem::path& path);

}  // namespace hpt
