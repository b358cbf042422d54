// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "hpt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "hpt/error.hpp"
#include "kernels.hpp"

namespace hpt {

const Tensor& Var::value() const { return graph->value(id); }

// ---------------------------------------------------------------------------
// Graph

Var Graph::param(Tensor& t) {
  Node n;
  n.leaf = &t;
  n.requires_grad = record_ && t.requires_grad();
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  return {this, nodes_.size() - 1};
}

Var Graph::constant(Tensor t) {
  Node n;
  n.owned = std::move(t);
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  return {this, nodes_.size() - 1};
}

Var Graph::constant_ref(const Tensor& t) {
  Node n;
  n.const_leaf = &t;
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  return {this, nodes_.size() - 1};
}

Var Graph::add_node(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  bool any = false;
  for (auto i : inputs) any = any || nodes_.at(i).requires_grad;
  n.requires_grad = record_ && any;
  if (n.requires_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  return {this, nodes_.size() - 1};
}

const Tensor& Graph::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (n.leaf) return *n.leaf;
  if (n.const_leaf) return *n.const_leaf;
  return n.owned;
}

std::span<double> Graph::grad_acc(std::size_t id) {
  auto& g = grads_[id];
  if (g.empty()) g.assign(value(id).numel(), 0.0);
  return g;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("backward: loss belongs to another graph");
  if (value(loss.id).numel() != 1)
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(value(loss.id).shape()));
  for (auto& g : grads_) g.clear();
  if (!nodes_[loss.id].requires_grad) {
    for (auto& n : nodes_)
      if (n.leaf && n.requires_grad) n.leaf->grad_mut();
    return;
  }
  grads_[loss.id].assign(1, 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || grads_[i].empty()) continue;
    n.backward(*this, i);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (!n.leaf || !n.requires_grad) continue;
    auto dst = n.leaf->grad_mut();
    const auto& g = grads_[i];
    for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
  }
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

Graph& same_graph(Var a, Var b) {
  if (!a.graph || a.graph != b.graph) throw ContractError("operands belong to different graphs");
  return *a.graph;
}

void require_ndim(const Tensor& t, std::size_t nd, const char* op) {
  if (t.ndim() != nd)
    throw DimensionError(std::string(op) + ": expected " + std::to_string(nd) + "-D input, got " +
                         shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra and element-wise ops

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_ndim(A, 2, "matmul");
  require_ndim(B, 2, "matmul");
  if (A.dim(1) != B.dim(0))
    throw DimensionError("matmul: inner dims differ, " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor out({m, n});
  kernels::gemm_nn(m, n, k, A.data().data(), B.data().data(), out.data().data());
  return g.add_node(std::move(out), {a.id, b.id}, [=](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    if (gr.requires_grad(a.id))
      kernels::gemm_nt(m, k, n, dy.data(), gr.value(b.id).data().data(), gr.grad_acc(a.id).data());
    if (gr.requires_grad(b.id))
      kernels::gemm_tn(k, n, m, gr.value(a.id).data().data(), dy.data(), gr.grad_acc(b.id).data());
  });
}

Var transpose(Var a) {
  Graph& g = *a.graph;
  const Tensor& A = a.value();
  require_ndim(A, 2, "transpose");
  const std::size_t r = A.dim(0), c = A.dim(1);
  Tensor out({c, r});
  kernels::transpose(r, c, A.data().data(), out.data().data());
  return g.add_node(std::move(out), {a.id}, [=](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    auto dx = gr.grad_acc(a.id);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += dy[j * r + i];
  });
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out.drop_grad();
  out.set_requires_grad(false);
  auto bd = b.value().data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  return g.add_node(std::move(out), {a.id, b.id}, [=](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    for (auto id : {a.id, b.id}) {
      if (!gr.requires_grad(id)) continue;
      auto dx = gr.grad_acc(id);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.shape());
  auto ad = a.value().data();
  auto bd = b.value().data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  return g.add_node(std::move(out), {a.id, b.id}, [=](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    auto av = gr.value(a.id).data();
    auto bv = gr.value(b.id).data();
    if (gr.requires_grad(a.id)) {
      auto dx = gr.grad_acc(a.id);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * bv[i];
    }
    if (gr.requires_grad(b.id)) {
      auto dx = gr.grad_acc(b.id);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Graph& g = *a.graph;
  Tensor out(a.shape());
  auto ad = a.value().data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * s;
  return g.add_node(std::move(out), {a.id}, [=](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    auto dx = gr.grad_acc(a.id);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * s;
  });
}

Var relu(Var a) {
  Graph& g = *a.graph;
  Tensor out(a.shape());
  auto ad = a.value().data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] > 0.0 ? ad[i] : 0.0;
  return g.add_node(std::move(out), {a.id}, [=](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    auto x = gr.value(a.id).data();
    auto dx = gr.grad_acc(a.id);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (x[i] > 0.0) dx[i] += dy[i];
  });
}

Var linear(Var x, Var w, Var b) {
  Graph& g = same_graph(x, w);
  same_graph(x, b);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  require_ndim(X, 2, "linear");
  require_ndim(W, 2, "linear");
  if (X.dim(1) != W.dim(1) || B.numel() != W.dim(0))
    throw DimensionError("linear: input " + shape_str(X.shape()) + " incompatible with weight " +
                         shape_str(W.shape()) + " and bias " + shape_str(B.shape()));
  const std::size_t n = X.dim(0), in = X.dim(1), outd = W.dim(0);
  Tensor out({n, outd});
  auto od = out.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < outd; ++j) od[i * outd + j] = B[j];
  kernels::gemm_nt(n, outd, in, X.data().data(), W.data().data(), od.data());
  return g.add_node(std::move(out), {x.id, w.id, b.id}, [=](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    if (gr.requires_grad(x.id))
      kernels::gemm_nn(n, in, outd, dy.data(), gr.value(w.id).data().data(), gr.grad_acc(x.id).data());
    if (gr.requires_grad(w.id))
      kernels::gemm_tn(outd, in, n, dy.data(), gr.value(x.id).data().data(), gr.grad_acc(w.id).data());
    if (gr.requires_grad(b.id)) {
      auto db = gr.grad_acc(b.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < outd; ++j) db[j] += dy[i * outd + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

Var conv2d(Var x, Var w, std::size_t stride, std::size_t pad) {
  Graph& g = same_graph(x, w);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  require_ndim(X, 4, "conv2d");
  require_ndim(W, 4, "conv2d");
  if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  const std::size_t F = W.dim(0), k = W.dim(2);
  if (W.dim(1) != C || W.dim(3) != k)
    throw DimensionError("conv2d: weight " + shape_str(W.shape()) + " does not match input " +
                         shape_str(X.shape()));
  if (k > H + 2 * pad || k > Wd + 2 * pad)
    throw DimensionError("conv2d: kernel " + shape_str(W.shape()) + " larger than padded input " +
                         shape_str(X.shape()));
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1;
  const std::size_t Wo = (Wd + 2 * pad - k) / stride + 1;
  const std::size_t P = Ho * Wo, NP = N * P, CKK = C * k * k;

  // col[(c, ki, kj)][(n, oh, ow)]
  std::vector<double> col(CKK * NP, 0.0);
  const double* xd = X.data().data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = col.data() + ((c * k + ki) * k + kj) * NP;
        for (std::size_t n = 0; n < N; ++n) {
          const double* plane = xd + (n * C + c) * H * Wd;
          double* dst = row + n * P;
          for (std::size_t oh = 0; oh < Ho; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - static_cast<std::ptrdiff_t>(pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t ow = 0; ow < Wo; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kj) - static_cast<std::ptrdiff_t>(pad);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(Wd)) continue;
              dst[oh * Wo + ow] = plane[ih * Wd + iw];
            }
          }
        }
      }

  std::vector<double> outm(F * NP, 0.0);
  kernels::gemm_nn(F, NP, CKK, W.data().data(), col.data(), outm.data());
  Tensor out({N, F, Ho, Wo});
  auto od = out.data();
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t n = 0; n < N; ++n)
      std::copy_n(outm.data() + f * NP + n * P, P, od.data() + (n * F + f) * P);

  const bool keep_col = g.recording() && g.requires_grad(w.id);
  if (!keep_col) col.clear();
  return g.add_node(std::move(out), {x.id, w.id},
                    [=, col = std::move(col)](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    std::vector<double> dym(F * NP);
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t n = 0; n < N; ++n)
        std::copy_n(dy.data() + (n * F + f) * P, P, dym.data() + f * NP + n * P);
    if (gr.requires_grad(w.id))
      kernels::gemm_nt(F, CKK, NP, dym.data(), col.data(), gr.grad_acc(w.id).data());
    if (!gr.requires_grad(x.id)) return;
    std::vector<double> dcol(CKK * NP, 0.0);
    kernels::gemm_tn(CKK, NP, F, gr.value(w.id).data().data(), dym.data(), dcol.data());
    auto dx = gr.grad_acc(x.id);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t ki = 0; ki < k; ++ki)
        for (std::size_t kj = 0; kj < k; ++kj) {
          const double* row = dcol.data() + ((c * k + ki) * k + kj) * NP;
          for (std::size_t n = 0; n < N; ++n) {
            double* plane = dx.data() + (n * C + c) * H * Wd;
            const double* src = row + n * P;
            for (std::size_t oh = 0; oh < Ho; ++oh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - static_cast<std::ptrdiff_t>(pad);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t ow = 0; ow < Wo; ++ow) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kj) - static_cast<std::ptrdiff_t>(pad);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(Wd)) continue;
                plane[ih * Wd + iw] += src[oh * Wo + ow];
              }
            }
          }
        }
  });
}

Var max_pool2x2(Var x) {
  Graph& g = *x.graph;
  const Tensor& X = x.value();
  require_ndim(X, 4, "max_pool2x2");
  const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  if (H % 2 || W % 2) throw DimensionError("max_pool2x2: spatial dims must be even, got " + shape_str(X.shape()));
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor out({N, C, Ho, Wo});
  std::vector<std::size_t> argmax(out.numel());
  auto xd = X.data();
  auto od = out.data();
  for (std::size_t plane = 0; plane < N * C; ++plane)
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        const std::size_t base = plane * H * W;
        std::size_t best = base + 2 * oh * W + 2 * ow;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = base + (2 * oh + di) * W + 2 * ow + dj;
            if (xd[idx] > xd[best]) best = idx;
          }
        const std::size_t o = (plane * Ho + oh) * Wo + ow;
        od[o] = xd[best];
        argmax[o] = best;
      }
  return g.add_node(std::move(out), {x.id}, [=, argmax = std::move(argmax)](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    auto dx = gr.grad_acc(x.id);
    for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
  });
}

Var global_avg_pool(Var x) {
  Graph& g = *x.graph;
  const Tensor& X = x.value();
  require_ndim(X, 4, "global_avg_pool");
  const std::size_t N = X.dim(0), C = X.dim(1), P = X.dim(2) * X.dim(3);
  Tensor out({N, C});
  auto xd = X.data();
  for (std::size_t i = 0; i < N * C; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < P; ++p) s += xd[i * P + p];
    out[i] = s / static_cast<double>(P);
  }
  return g.add_node(std::move(out), {x.id}, [=](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    auto dx = gr.grad_acc(x.id);
    const double inv = 1.0 / static_cast<double>(P);
    for (std::size_t i = 0; i < N * C; ++i)
      for (std::size_t p = 0; p < P; ++p) dx[i * P + p] += dy[i] * inv;
  });
}

// ---------------------------------------------------------------------------
// Batch normalization

namespace {

struct BnLayout {
  std::size_t N, C, P;
};

BnLayout bn_layout(const Tensor& X, const Tensor& gamma, const Tensor& beta) {
  if (X.ndim() != 2 && X.ndim() != 4)
    throw DimensionError("batch_norm: expected N x C or N x C x H x W, got " + shape_str(X.shape()));
  BnLayout l{X.dim(0), X.dim(1), X.ndim() == 4 ? X.dim(2) * X.dim(3) : 1};
  if (gamma.numel() != l.C || beta.numel() != l.C)
    throw DimensionError("batch_norm: channel count " + std::to_string(l.C) + " does not match affine " +
                         shape_str(gamma.shape()));
  return l;
}

}  // namespace

Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats) {
  Graph& g = same_graph(x, gamma);
  same_graph(x, beta);
  const Tensor& X = x.value();
  const BnLayout L = bn_layout(X, gamma.value(), beta.value());
  const double M = static_cast<double>(L.N * L.P);
  auto xd = X.data();
  auto gd = gamma.value().data();
  auto bd = beta.value().data();

  std::vector<double> mu(L.C, 0.0), var(L.C, 0.0), inv_std(L.C);
  for (std::size_t c = 0; c < L.C; ++c) {
    double s = 0.0;
    for (std::size_t n = 0; n < L.N; ++n)
      for (std::size_t p = 0; p < L.P; ++p) s += xd[(n * L.C + c) * L.P + p];
    mu[c] = s / M;
    double v = 0.0;
    for (std::size_t n = 0; n < L.N; ++n)
      for (std::size_t p = 0; p < L.P; ++p) {
        const double d = xd[(n * L.C + c) * L.P + p] - mu[c];
        v += d * d;
      }
    var[c] = v / M;
    inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  }
  Tensor xhat(X.shape());
  Tensor out(X.shape());
  auto hd = xhat.data();
  auto od = out.data();
  for (std::size_t n = 0; n < L.N; ++n)
    for (std::size_t c = 0; c < L.C; ++c)
      for (std::size_t p = 0; p < L.P; ++p) {
        const std::size_t i = (n * L.C + c) * L.P + p;
        hd[i] = (xd[i] - mu[c]) * inv_std[c];
        od[i] = gd[c] * hd[i] + bd[c];
      }
  if (stats) *stats = {mu, var};

  return g.add_node(std::move(out), {x.id, gamma.id, beta.id},
                    [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    auto h = xhat.data();
    auto gam = gr.value(gamma.id).data();
    std::vector<double> sdy(L.C, 0.0), sdyh(L.C, 0.0);
    for (std::size_t c = 0; c < L.C; ++c)
      for (std::size_t n = 0; n < L.N; ++n)
        for (std::size_t p = 0; p < L.P; ++p) {
          const std::size_t i = (n * L.C + c) * L.P + p;
          sdy[c] += dy[i];
          sdyh[c] += dy[i] * h[i];
        }
    if (gr.requires_grad(gamma.id)) {
      auto dg = gr.grad_acc(gamma.id);
      for (std::size_t c = 0; c < L.C; ++c) dg[c] += sdyh[c];
    }
    if (gr.requires_grad(beta.id)) {
      auto db = gr.grad_acc(beta.id);
      for (std::size_t c = 0; c < L.C; ++c) db[c] += sdy[c];
    }
    if (!gr.requires_grad(x.id)) return;
    auto dx = gr.grad_acc(x.id);
    for (std::size_t n = 0; n < L.N; ++n)
      for (std::size_t c = 0; c < L.C; ++c) {
        const double k = gam[c] * inv_std[c];
        const double mdy = sdy[c] / M, mdyh = sdyh[c] / M;
        for (std::size_t p = 0; p < L.P; ++p) {
          const std::size_t i = (n * L.C + c) * L.P + p;
          dx[i] += k * (dy[i] - mdy - h[i] * mdyh);
        }
      }
  });
}

Var batch_norm_fixed(Var x, Var gamma, Var beta, std::span<const double> mean, std::span<const double> var,
                     double eps) {
  Graph& g = same_graph(x, gamma);
  same_graph(x, beta);
  const Tensor& X = x.value();
  const BnLayout L = bn_layout(X, gamma.value(), beta.value());
  if (mean.size() != L.C || var.size() != L.C) throw DimensionError("batch_norm: running stats size mismatch");
  std::vector<double> mu(mean.begin(), mean.end()), inv_std(L.C);
  for (std::size_t c = 0; c < L.C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  auto xd = X.data();
  auto gd = gamma.value().data();
  auto bd = beta.value().data();
  Tensor out(X.shape());
  auto od = out.data();
  for (std::size_t n = 0; n < L.N; ++n)
    for (std::size_t c = 0; c < L.C; ++c)
      for (std::size_t p = 0; p < L.P; ++p) {
        const std::size_t i = (n * L.C + c) * L.P + p;
        od[i] = gd[c] * ((xd[i] - mu[c]) * inv_std[c]) + bd[c];
      }
  return g.add_node(std::move(out), {x.id, gamma.id, beta.id},
                    [=, mu = std::move(mu), inv_std = std::move(inv_std)](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    auto xv = gr.value(x.id).data();
    auto gam = gr.value(gamma.id).data();
    const bool dgam = gr.requires_grad(gamma.id), dbet = gr.requires_grad(beta.id);
    const bool dxin = gr.requires_grad(x.id);
    std::span<double> dg, db, dx;
    if (dgam) dg = gr.grad_acc(gamma.id);
    if (dbet) db = gr.grad_acc(beta.id);
    if (dxin) dx = gr.grad_acc(x.id);
    for (std::size_t c = 0; c < L.C; ++c)
      for (std::size_t n = 0; n < L.N; ++n)
        for (std::size_t p = 0; p < L.P; ++p) {
          const std::size_t i = (n * L.C + c) * L.P + p;
          if (dgam) dg[c] += dy[i] * (xv[i] - mu[c]) * inv_std[c];
          if (dbet) db[c] += dy[i];
          if (dxin) dx[i] += dy[i] * gam[c] * inv_std[c];
        }
  });
}

// ---------------------------------------------------------------------------
// Row-wise ops

Var l2_normalize(Var x) {
  Graph& g = *x.graph;
  const Tensor& X = x.value();
  require_ndim(X, 2, "l2_normalize");
  const std::size_t N = X.dim(0), d = X.dim(1);
  auto xd = X.data();
  Tensor out(X.shape());
  auto od = out.data();
  std::vector<double> norms(N);
  for (std::size_t i = 0; i < N; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += xd[i * d + j] * xd[i * d + j];
    const double nrm = std::sqrt(s);
    if (!(nrm > kNormEpsilon))
      throw DegenerateEmbeddingError("l2_normalize: row " + std::to_string(i) + " has norm " + std::to_string(nrm));
    // Rows already unit to within roundoff pass through untouched, which makes
    // the op exactly idempotent.
    const bool unit = std::abs(nrm - 1.0) <= 1e-13;
    norms[i] = unit ? 1.0 : nrm;
    for (std::size_t j = 0; j < d; ++j) od[i * d + j] = unit ? xd[i * d + j] : xd[i * d + j] / nrm;
  }
  return g.add_node(std::move(out), {x.id}, [=, norms = std::move(norms)](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    auto y = gr.value(self).data();
    auto dx = gr.grad_acc(x.id);
    for (std::size_t i = 0; i < N; ++i) {
      double yd = 0.0;
      for (std::size_t j = 0; j < d; ++j) yd += y[i * d + j] * dy[i * d + j];
      for (std::size_t j = 0; j < d; ++j) dx[i * d + j] += (dy[i * d + j] - y[i * d + j] * yd) / norms[i];
    }
  });
}

Var row_dot(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_ndim(a.value(), 2, "row_dot");
  require_same_shape(a.value(), b.value(), "row_dot");
  const std::size_t N = a.value().dim(0), d = a.value().dim(1);
  auto ad = a.value().data();
  auto bd = b.value().data();
  Tensor out({N, 1});
  for (std::size_t i = 0; i < N; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += ad[i * d + j] * bd[i * d + j];
    out[i] = s;
  }
  return g.add_node(std::move(out), {a.id, b.id}, [=](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    auto av = gr.value(a.id).data();
    auto bv = gr.value(b.id).data();
    if (gr.requires_grad(a.id)) {
      auto dx = gr.grad_acc(a.id);
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < d; ++j) dx[i * d + j] += dy[i] * bv[i * d + j];
    }
    if (gr.requires_grad(b.id)) {
      auto dx = gr.grad_acc(b.id);
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < d; ++j) dx[i * d + j] += dy[i] * av[i * d + j];
    }
  });
}

Var log_softmax(Var x) {
  Graph& g = *x.graph;
  const Tensor& X = x.value();
  require_ndim(X, 2, "log_softmax");
  const std::size_t N = X.dim(0), C = X.dim(1);
  auto xd = X.data();
  Tensor out(X.shape());
  auto od = out.data();
  for (std::size_t i = 0; i < N; ++i) {
    double m = xd[i * C];
    for (std::size_t j = 1; j < C; ++j) m = std::max(m, xd[i * C + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < C; ++j) s += std::exp(xd[i * C + j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < C; ++j) od[i * C + j] = xd[i * C + j] - lse;
  }
  return g.add_node(std::move(out), {x.id}, [=](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    auto y = gr.value(self).data();
    auto dx = gr.grad_acc(x.id);
    for (std::size_t i = 0; i < N; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < C; ++j) s += dy[i * C + j];
      for (std::size_t j = 0; j < C; ++j) dx[i * C + j] += dy[i * C + j] - std::exp(y[i * C + j]) * s;
    }
  });
}

Var gather_rows(Var x, const std::vector<std::size_t>& rows) {
  Graph& g = *x.graph;
  const Tensor& X = x.value();
  require_ndim(X, 2, "gather_rows");
  const std::size_t N = X.dim(0), d = X.dim(1);
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  for (auto r : rows)
    if (r >= N) throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range for " + shape_str(X.shape()));
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(X.data().data() + rows[i] * d, d, out.data().data() + i * d);
  return g.add_node(std::move(out), {x.id}, [=](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    auto dx = gr.grad_acc(x.id);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) dx[rows[i] * d + j] += dy[i * d + j];
  });
}

Var pick(Var x, const std::vector<std::size_t>& cols) {
  Graph& g = *x.graph;
  const Tensor& X = x.value();
  require_ndim(X, 2, "pick");
  const std::size_t N = X.dim(0), C = X.dim(1);
  if (cols.size() != N) throw DimensionError("pick: need one column per row");
  for (auto c : cols)
    if (c >= C) throw DimensionError("pick: column " + std::to_string(c) + " out of range");
  Tensor out({N});
  for (std::size_t i = 0; i < N; ++i) out[i] = X.at(i, cols[i]);
  return g.add_node(std::move(out), {x.id}, [=](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    auto dx = gr.grad_acc(x.id);
    for (std::size_t i = 0; i < N; ++i) dx[i * C + cols[i]] += dy[i];
  });
}

Var concat(const std::vector<Var>& parts, std::size_t dim) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Graph& g = *parts[0].graph;
  const Shape& s0 = parts[0].shape();
  if (dim >= s0.size()) throw DimensionError("concat: dim out of range for " + shape_str(s0));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < dim; ++i) outer *= s0[i];
  for (std::size_t i = dim + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    same_graph(parts[0], p);
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == dim) || s[i] == s0[i];
    if (!ok) throw DimensionError("concat: incompatible shapes " + shape_str(s0) + " and " + shape_str(s));
    widths.push_back(s[dim] * inner);
    ids.push_back(p.id);
    total += s[dim];
  }
  Shape os = s0;
  os[dim] = total;
  Tensor out(os);
  const std::size_t row = total * inner;
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto src = parts[k].value().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.data() + o * widths[k], widths[k], out.data().data() + o * row + off);
    off += widths[k];
  }
  return g.add_node(std::move(out), ids, [=](Graph& gr, std::size_t self) {
    auto dy = gr.grad(self);
    std::size_t o2 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (gr.requires_grad(ids[k])) {
        auto dx = gr.grad_acc(ids[k]);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < widths[k]; ++j) dx[o * widths[k] + j] += dy[o * row + o2 + j];
      }
      o2 += widths[k];
    }
  });
}

Var sum(Var x) {
  Graph& g = *x.graph;
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return g.add_node(Tensor::scalar(s), {x.id}, [=](Graph& gr, std::size_t self) {
    const double dy = gr.grad(self)[0];
    for (auto& v : gr.grad_acc(x.id)) v += dy;
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().numel());
  Graph& g = *x.graph;
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return g.add_node(Tensor::scalar(s / n), {x.id}, [=](Graph& gr, std::size_t self) {
    const double dy = gr.grad(self)[0] / n;
    for (auto& v : gr.grad_acc(x.id)) v += dy;
  });
}

Var sigmoid_bce(Var logits, const Tensor& targets) {
  Graph& g = *logits.graph;
  const Tensor& Z = logits.value();
  require_same_shape(Z, targets, "sigmoid_bce");
  const double n = static_cast<double>(Z.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < Z.numel(); ++i) {
    const double z = Z[i];
    s += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return g.add_node(Tensor::scalar(s / n), {logits.id}, [=](Graph& gr, std::size_t self) {
    const double dy = gr.grad(self)[0] / n;
    auto zv = gr.value(logits.id).data();
    auto dx = gr.grad_acc(logits.id);
    for (std::size_t i = 0; i < zv.size(); ++i) {
      const double z = zv[i];
      const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      dx[i] += dy * (sig - targets[i]);
    }
  });
}

// ---------------------------------------------------------------------------

double finite_diff_check(const std::function<Var(Graph&, Tensor&)>& build, Tensor& theta, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ContractError("finite_diff_check: eps must lie in (0, 1e-2]");
  const bool had = theta.requires_grad();
  theta.set_requires_grad(true);
  theta.drop_grad();
  {
    Graph g;
    Var loss = build(g, theta);
    if (!std::isfinite(loss.value().item())) throw NumericError("finite_diff_check: non-finite loss");
    g.backward(loss);
  }
  std::vector<double> analytic(theta.grad().begin(), theta.grad().end());
  if (analytic.empty()) analytic.assign(theta.numel(), 0.0);
  theta.drop_grad();

  auto eval = [&]() {
    Graph g(false);
    const double v = build(g, theta).value().item();
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite loss under perturbation");
    return v;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.numel(); ++i) {
    const double orig = theta[i];
    theta[i] = orig + eps;
    const double up = eval();
    theta[i] = orig - eps;
    const double down = eval();
    theta[i] = orig;
    const double fd = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  theta.set_requires_grad(had);
  return worst;
}

}  // namespace hpt
