// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense kernels shared by the autodiff ops. Every output element accumulates
// its products in ascending order of the shared index, independent of the
// blocking, so results are bit-stable run to run.
#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace hpt::kernels {

namespace detail {

inline constexpr std::size_t kDepthBlock = 128;

using v4d = double __attribute__((vector_size(32)));

inline v4d load4(const double* p) {
  v4d v;
  __builtin_memcpy(&v, p, sizeof v);
  return v;
}

inline void store4(double* p, v4d v) { __builtin_memcpy(p, &v, sizeof v); }

/// C[i0:i0+4, j0:j0+8] accumulated in registers over the whole shared index.
/// The A entry for (row r, shared p) is a[r * ars + p * aps].
inline void micro_4x8(std::size_t i0, std::size_t j0, std::size_t n, std::size_t p0, std::size_t p1,
                      const double* a, std::size_t ars, std::size_t aps, const double* b, double* c) {
  v4d acc[4][2];
  for (std::size_t r = 0; r < 4; ++r) {
    acc[r][0] = load4(c + (i0 + r) * n + j0);
    acc[r][1] = load4(c + (i0 + r) * n + j0 + 4);
  }
  const double* a0 = a + i0 * ars;
  for (std::size_t p = p0; p < p1; ++p) {
    const double* brow = b + p * n + j0;
    const v4d b0 = load4(brow);
    const v4d b1 = load4(brow + 4);
    const double* ap = a0 + p * aps;
    for (std::size_t r = 0; r < 4; ++r) {
      const double av = ap[r * ars];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  for (std::size_t r = 0; r < 4; ++r) {
    store4(c + (i0 + r) * n + j0, acc[r][0]);
    store4(c + (i0 + r) * n + j0 + 4, acc[r][1]);
  }
}

/// Scalar path for the ragged edges; same per-element accumulation order.
inline void edge(std::size_t i_begin, std::size_t i_end, std::size_t j_begin, std::size_t j_end, std::size_t n,
                 std::size_t p0, std::size_t p1, const double* a, std::size_t ars, std::size_t aps, const double* b,
                 double* c) {
  for (std::size_t i = i_begin; i < i_end; ++i)
    for (std::size_t j = j_begin; j < j_end; ++j) {
      double acc = c[i * n + j];
      for (std::size_t p = p0; p < p1; ++p) acc += a[i * ars + p * aps] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

inline void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t ars,
                         std::size_t aps, const double* b, double* c) {
  const std::size_t m4 = m - m % 4, n8 = n - n % 8;
  // Blocking over the shared index keeps the B panel cache resident; each
  // element still sees p in ascending order.
  for (std::size_t p0 = 0; p0 < k; p0 += kDepthBlock) {
    const std::size_t p1 = std::min(k, p0 + kDepthBlock);
    for (std::size_t j = 0; j < n8; j += 8)
      for (std::size_t i = 0; i < m4; i += 4) micro_4x8(i, j, n, p0, p1, a, ars, aps, b, c);
    edge(0, m4, n8, n, n, p0, p1, a, ars, aps, b, c);
    edge(m4, m, 0, n, n, p0, p1, a, ars, aps, b, c);
  }
}

}  // namespace detail

/// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                    double* c) {
  detail::gemm_strided(m, n, k, a, k, 1, b, c);
}

/// C[m x n] += A^T * B with A stored k x m, B stored k x n.
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                    double* c) {
  detail::gemm_strided(m, n, k, a, 1, m, b, c);
}

inline void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst) {
  constexpr std::size_t T = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += T)
    for (std::size_t c0 = 0; c0 < cols; c0 += T) {
      const std::size_t r1 = std::min(rows, r0 + T), c1 = std::min(cols, c0 + T);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
    }
}

/// C[m x n] += A[m x k] * B^T with B stored n x k.
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                    double* c) {
  std::vector<double> bt(n * k);
  transpose(n, k, b, bt.data());
  gemm_nn(m, n, k, a, bt.data(), c);
}

}  // namespace hpt::kernels
