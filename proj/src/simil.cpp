// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "hpt/simil.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "hpt/error.hpp"

namespace hpt {

double error_iou(const std::vector<std::size_t>& preds_a, const std::vector<std::size_t>& preds_b,
                 const std::vector<std::size_t>& labels) {
  if (preds_a.size() != labels.size() || preds_b.size() != labels.size())
    throw DimensionError("error_iou: prediction and label lengths differ (" + std::to_string(preds_a.size()) + ", " +
                         std::to_string(preds_b.size()) + ", " + std::to_string(labels.size()) + ")");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool ea = preds_a[i] != labels[i];
    const bool eb = preds_b[i] != labels[i];
    inter += ea && eb;
    uni += ea || eb;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

/// A A^T with a zeroed diagonal.
std::vector<double> offdiag_gram(const Tensor& a) {
  const std::size_t n = a.dim(0), p = a.dim(1);
  std::vector<double> g(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < p; ++k) acc += a.at(i, k) * a.at(j, k);
      g[i * n + j] = acc;
      g[j * n + i] = acc;
    }
  return g;
}

double frob(const std::vector<double>& x, const std::vector<double>& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

}  // namespace

double rv2(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0))
    throw DimensionError("rv2: activations " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " need the same number of rows");
  const auto ga = offdiag_gram(a);
  const auto gb = offdiag_gram(b);
  const double aa = frob(ga, ga), bb = frob(gb, gb);
  if (aa == 0.0 || bb == 0.0)
    throw DegenerateError("rv2: Gram matrix without its diagonal is zero (n = " + std::to_string(a.dim(0)) +
                          "; rows mutually orthogonal or a single example)");
  return frob(ga, gb) / std::sqrt(aa * bb);
}

// ---------------------------------------------------------------------------
// Welch's t-test

namespace {

/// Lentz's continued fraction for the incomplete beta function.
double beta_cf(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw ContractError("incomplete_beta: a and b must be positive");
  if (!(x >= 0 && x <= 1)) throw ContractError("incomplete_beta: x outside [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double nu) {
  if (!(nu > 0)) throw ContractError("student_t_cdf: degrees of freedom must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * incomplete_beta(0.5 * nu, 0.5, nu / (nu + t * t));
  return t > 0 ? 1.0 - tail : tail;
}

WelchResult welch_t(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw ContractError("welch_t: each sample needs at least two values");
  auto moments = [](const std::vector<double>& x) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / static_cast<double>(x.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sa = va / na, sb = vb / nb;
  if (sa + sb == 0.0) throw DegenerateError("welch_t: both samples have zero variance");
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.dof = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  r.p = incomplete_beta(0.5 * r.dof, 0.5, r.dof / (r.dof + r.t * r.t));
  return r;
}

// ---------------------------------------------------------------------------
// Activation files

static_assert(std::endian::native == std::endian::little, "activation I/O assumes a little-endian host");

namespace {
constexpr char kActsMagic[8] = {'H', 'P', 'T', 'A', 'C', 'T', 'S', '1'};
}

void save_activations(const ActivationMatrix& m, const std::filesystem::path& path) {
  if (m.values.ndim() != 2) throw DimensionError("activation matrix must be 2-D");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::uint64_t n = m.values.dim(0), p = m.values.dim(1);
  out.write(kActsMagic, sizeof(kActsMagic));
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(&p), sizeof(p));
  out.write(reinterpret_cast<const char*>(m.values.data().data()),
            static_cast<std::streamsize>(m.values.numel() * sizeof(double)));
  const std::string trailer = m.provenance.dump();
  out.write(trailer.data(), static_cast<std::streamsize>(trailer.size()));
  if (!out) throw DataError("short write to " + path.string());
}

ActivationMatrix load_activations(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("activation file not found: " + path.string());
  char magic[8];
  std::uint64_t n = 0, p = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  in.read(reinterpret_cast<char*>(&p), sizeof(p));
  if (!in || std::memcmp(magic, kActsMagic, sizeof(magic)) != 0)
    throw DataError(path.string() + ": not an activation file");
  if (n == 0 || p == 0 || n > (1ULL << 32) || p > (1ULL << 32) || n * p > (1ULL << 32))
    throw DataError(path.string() + ": implausible activation shape");
  ActivationMatrix m;
  m.values = Tensor({n, p});
  in.read(reinterpret_cast<char*>(m.values.data().data()), static_cast<std::streamsize>(n * p * sizeof(double)));
  if (!in) throw DataError(path.string() + ": truncated activation data");
  const std::string trailer((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    m.provenance = trailer.empty() ? nlohmann::ordered_json::object() : nlohmann::ordered_json::parse(trailer);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad provenance trailer: " + e.what());
  }
  return m;
}

}  // namespace hpt
