// Copyright 2026 The damer Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "damer/core/error.hpp"
#include "damer/core/rng.hpp"
#include "damer/core/tensor.hpp"

namespace damer {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
// Column block of a row-major [rows x stride] buffer, used for per-head views.
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
MatMap<T> as_matrix(std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return MatMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <typename T>
ConstMatMap<T> as_matrix(const std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Eigen chooses vectorised code paths by pointer alignment, so the same
// product can round differently depending on where the heap placed a buffer.
// Reductions run on Eigen-owned (aligned) copies to keep runs bit-identical.
template <typename Derived>
RowMat<typename Derived::Scalar> stage(const Eigen::MatrixBase<Derived>& m) {
  return m;
}

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.dims() == b.dims(), ErrorKind::kShapeMismatch,
          std::string(op) + ": " + shape_str(a.dims()) + " vs " + shape_str(b.dims()));
}

template <typename T>
T normal_cdf(T x) {
  return T{0.5} * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
}

}  // namespace detail

/// y = x W^T + b over the last axis. `b` may be left undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {}) {
  detail::require(weight.rank() == 2, ErrorKind::kShapeMismatch, "linear: weight must be rank 2");
  const std::size_t d_out = weight.dim(0);
  const std::size_t d_in = weight.dim(1);
  detail::require(x.rank() >= 1 && x.dims().back() == d_in, ErrorKind::kShapeMismatch,
                  "linear: input " + shape_str(x.dims()) + " vs weight " + shape_str(weight.dims()));
  if (bias.defined()) {
    detail::require(bias.size() == d_out, ErrorKind::kShapeMismatch, "linear: bias length");
  }
  const std::size_t rows = x.size() / d_in;
  Shape out_dims = x.dims();
  out_dims.back() = d_out;

  std::vector<T> out(rows * d_out);
  detail::RowMat<T> y = detail::stage(detail::as_matrix(x.data(), rows, d_in)) *
                        detail::stage(detail::as_matrix(weight.data(), d_out, d_in)).transpose();
  if (bias.defined()) {
    const auto b = detail::as_matrix(bias.data(), 1, d_out);
    y.rowwise() += b.row(0);
  }
  detail::as_matrix(out, rows, d_out) = y;

  Node<T>* xn = x.node();
  Node<T>* wn = weight.node();
  Node<T>* bn = bias.defined() ? bias.node() : nullptr;
  return make_result<T>("linear", std::move(out_dims), std::move(out), {x, weight, bias},
                        [=](const std::vector<T>& g) {
                          const auto gy = detail::stage(detail::as_matrix(g, rows, d_out));
                          if (xn->requires_grad) {
                            const detail::RowMat<T> gx = gy * detail::stage(detail::as_matrix(wn->value, d_out, d_in));
                            detail::as_matrix(xn->grad_buffer(), rows, d_in) += gx;
                          }
                          if (wn->requires_grad) {
                            const detail::RowMat<T> gw =
                                gy.transpose() * detail::stage(detail::as_matrix(xn->value, rows, d_in));
                            detail::as_matrix(wn->grad_buffer(), d_out, d_in) += gw;
                          }
                          if (bn && bn->requires_grad) {
                            const detail::RowMat<T> gb = gy.colwise().sum();
                            detail::as_matrix(bn->grad_buffer(), 1, d_out) += gb;
                          }
                        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return make_result<T>("add", a.dims(), std::move(out), {a, b}, [=](const std::vector<T>& g) {
    for (Node<T>* n : {an, bn}) {
      if (!n->requires_grad) continue;
      auto& dst = n->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

/// x [..., N, D] + y [N, D], broadcast over the leading axes.
template <typename T>
Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& y) {
  detail::require(x.rank() >= 2 && y.rank() == 2 && x.dim(x.rank() - 2) == y.dim(0) && x.dims().back() == y.dim(1),
                  ErrorKind::kShapeMismatch, "add_broadcast: " + shape_str(x.dims()) + " + " + shape_str(y.dims()));
  const std::size_t block = y.size();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i % block];
  Node<T>* xn = x.node();
  Node<T>* yn = y.node();
  return make_result<T>("add_broadcast", x.dims(), std::move(out), {x, y}, [=](const std::vector<T>& g) {
    if (xn->requires_grad) {
      auto& dst = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    if (yn->requires_grad) {
      auto& dst = yn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i % block] += g[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  Node<T>* xn = x.node();
  return make_result<T>("scale", x.dims(), std::move(out), {x}, [=](const std::vector<T>& g) {
    auto& dst = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
  });
}

/// softmax(z / tau) over the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& z, T tau = T{1}) {
  if (!(tau > T{0})) fail(ErrorKind::kBadTemperature, "softmax temperature must be positive");
  const std::size_t c = z.dims().back();
  const std::size_t rows = z.size() / c;
  std::vector<T> out(z.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = z.data().data() + r * c;
    T* o = out.data() + r * c;
    const T peak = *std::max_element(in, in + c);
    T total{0};
    for (std::size_t j = 0; j < c; ++j) total += (o[j] = std::exp((in[j] - peak) / tau));
    for (std::size_t j = 0; j < c; ++j) o[j] /= total;
  }
  auto probs = std::make_shared<std::vector<T>>(out);
  Node<T>* zn = z.node();
  return make_result<T>("softmax", z.dims(), std::move(out), {z}, [=](const std::vector<T>& g) {
    auto& dst = zn->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = probs->data() + r * c;
      const T* gr = g.data() + r * c;
      T dot{0};
      for (std::size_t j = 0; j < c; ++j) dot += gr[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) dst[r * c + j] += y[j] * (gr[j] - dot) / tau;
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& z, T tau = T{1}) {
  if (!(tau > T{0})) fail(ErrorKind::kBadTemperature, "log_softmax temperature must be positive");
  const std::size_t c = z.dims().back();
  const std::size_t rows = z.size() / c;
  std::vector<T> out(z.size());
  auto probs = std::make_shared<std::vector<T>>(z.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = z.data().data() + r * c;
    const T peak = *std::max_element(in, in + c);
    T total{0};
    for (std::size_t j = 0; j < c; ++j) total += std::exp((in[j] - peak) / tau);
    const T lse = std::log(total);
    for (std::size_t j = 0; j < c; ++j) {
      out[r * c + j] = (in[j] - peak) / tau - lse;
      (*probs)[r * c + j] = std::exp(out[r * c + j]);
    }
  }
  Node<T>* zn = z.node();
  return make_result<T>("log_softmax", z.dims(), std::move(out), {z}, [=](const std::vector<T>& g) {
    auto& dst = zn->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      T total{0};
      for (std::size_t j = 0; j < c; ++j) total += g[r * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        dst[r * c + j] += (g[r * c + j] - (*probs)[r * c + j] * total) / tau;
      }
    }
  });
}

/// Per-token normalisation over the last axis with affine (gamma, beta).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  const std::size_t d = x.dims().back();
  detail::require(d >= 1 && gamma.size() == d && beta.size() == d, ErrorKind::kShapeMismatch,
                  "layer_norm: affine parameters must match the last axis");
  const std::size_t rows = x.size() / d;
  std::vector<T> out(x.size());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<T>(d);
    const T inv = T{1} / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (in[j] - mean) * inv;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = gamma[j] * h + beta[j];
    }
  }
  Node<T>* xn = x.node();
  Node<T>* gn = gamma.node();
  Node<T>* bn = beta.node();
  return make_result<T>("layer_norm", x.dims(), std::move(out), {x, gamma, beta}, [=](const std::vector<T>& g) {
    std::vector<T> gh(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* h = xhat->data() + r * d;
      const T* gr = g.data() + r * d;
      if (gn->requires_grad) {
        auto& dg = gn->grad_buffer();
        for (std::size_t j = 0; j < d; ++j) dg[j] += gr[j] * h[j];
      }
      if (bn->requires_grad) {
        auto& db = bn->grad_buffer();
        for (std::size_t j = 0; j < d; ++j) db[j] += gr[j];
      }
      if (!xn->requires_grad) continue;
      T mean_g{0};
      T mean_gh{0};
      for (std::size_t j = 0; j < d; ++j) {
        gh[j] = gr[j] * gn->value[j];
        mean_g += gh[j];
        mean_gh += gh[j] * h[j];
      }
      mean_g /= static_cast<T>(d);
      mean_gh /= static_cast<T>(d);
      auto& dx = xn->grad_buffer();
      for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += (*inv_std)[r] * (gh[j] - mean_g - h[j] * mean_gh);
    }
  });
}

/// Exact GELU, x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * detail::normal_cdf(x[i]);
  Node<T>* xn = x.node();
  return make_result<T>("gelu", x.dims(), std::move(out), {x}, [=](const std::vector<T>& g) {
    auto& dst = xn->grad_buffer();
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xn->value[i];
      const T pdf = inv_sqrt_2pi * std::exp(T{-0.5} * v * v);
      dst[i] += g[i] * (detail::normal_cdf(v) + v * pdf);
    }
  });
}

/// Inverted dropout. Identity outside training or when p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng* rng, bool training) {
  if (!training || p <= 0.0 || rng == nullptr) return x;
  if (p >= 1.0) fail(ErrorKind::kConfigError, "dropout probability must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(x.size());
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng->uniform() >= p ? keep_scale : T{0};
    out[i] = x[i] * (*mask)[i];
  }
  Node<T>* xn = x.node();
  return make_result<T>("dropout", x.dims(), std::move(out), {x}, [=](const std::vector<T>& g) {
    auto& dst = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * (*mask)[i];
  });
}

/// Scaled dot-product attention on already-projected q [B, Nq, D],
/// k/v [B, Nk, D], split into `heads` column blocks of width D / heads.
/// When `weights_out` is given it receives the attention matrices
/// [B, heads, Nq, Nk].
template <typename T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                       std::size_t heads, std::vector<T>* weights_out = nullptr) {
  detail::require(q.rank() == 3 && k.rank() == 3 && v.rank() == 3, ErrorKind::kShapeMismatch,
                  "attention expects rank-3 [B x N x D] inputs");
  const std::size_t batch = q.dim(0), nq = q.dim(1), d = q.dim(2);
  const std::size_t nk = k.dim(1);
  detail::require(k.dim(0) == batch && v.dim(0) == batch && k.dim(2) == d && v.dim(2) == d && v.dim(1) == nk,
                  ErrorKind::kShapeMismatch,
                  "attention: q " + shape_str(q.dims()) + " k " + shape_str(k.dims()) + " v " + shape_str(v.dims()));
  detail::require(heads >= 1 && d % heads == 0, ErrorKind::kHeadDivisibility,
                  "model dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dk = d / heads;
  const T inv_scale = T{1} / std::sqrt(static_cast<T>(dk));
  using detail::ConstStridedMap;
  using detail::StridedMap;
  const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(d));
  const auto eq = static_cast<Eigen::Index>(nq), ek = static_cast<Eigen::Index>(nk),
             edk = static_cast<Eigen::Index>(dk);

  auto attn = std::make_shared<std::vector<T>>(batch * heads * nq * nk);
  std::vector<T> out(batch * nq * d);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const auto qh = detail::stage(ConstStridedMap<T>(q.data().data() + b * nq * d + h * dk, eq, edk, stride));
      const auto kh = detail::stage(ConstStridedMap<T>(k.data().data() + b * nk * d + h * dk, ek, edk, stride));
      const auto vh = detail::stage(ConstStridedMap<T>(v.data().data() + b * nk * d + h * dk, ek, edk, stride));
      detail::RowMat<T> a = (qh * kh.transpose()) * inv_scale;
      for (Eigen::Index i = 0; i < eq; ++i) {
        auto row = a.row(i);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
      }
      detail::MatMap<T>(attn->data() + (b * heads + h) * nq * nk, eq, ek) = a;
      const detail::RowMat<T> oh = a * vh;
      StridedMap<T>(out.data() + b * nq * d + h * dk, eq, edk, stride) = oh;
    }
  }
  if (weights_out) *weights_out = *attn;

  Node<T>* qn = q.node();
  Node<T>* kn = k.node();
  Node<T>* vn = v.node();
  return make_result<T>("attention", {batch, nq, d}, std::move(out), {q, k, v}, [=](const std::vector<T>& g) {
    detail::RowMat<T> ga(eq, ek);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t qoff = b * nq * d + h * dk;
        const std::size_t koff = b * nk * d + h * dk;
        const auto go = detail::stage(ConstStridedMap<T>(g.data() + qoff, eq, edk, stride));
        const auto qh = detail::stage(ConstStridedMap<T>(qn->value.data() + qoff, eq, edk, stride));
        const auto kh = detail::stage(ConstStridedMap<T>(kn->value.data() + koff, ek, edk, stride));
        const auto vh = detail::stage(ConstStridedMap<T>(vn->value.data() + koff, ek, edk, stride));
        const auto a = detail::stage(detail::ConstMatMap<T>(attn->data() + (b * heads + h) * nq * nk, eq, ek));
        if (vn->requires_grad) {
          const detail::RowMat<T> gv = a.transpose() * go;
          StridedMap<T>(vn->grad_buffer().data() + koff, ek, edk, stride) += gv;
        }
        ga.noalias() = go * vh.transpose();
        // Softmax Jacobian row by row: ds = a * (ga - <ga, a>).
        for (Eigen::Index i = 0; i < eq; ++i) {
          const T dot = ga.row(i).dot(a.row(i));
          ga.row(i) = (a.row(i).array() * (ga.row(i).array() - dot)).matrix() * inv_scale;
        }
        if (qn->requires_grad) {
          const detail::RowMat<T> gq = ga * kh;
          StridedMap<T>(qn->grad_buffer().data() + qoff, eq, edk, stride) += gq;
        }
        if (kn->requires_grad) {
          const detail::RowMat<T> gk = ga.transpose() * qh;
          StridedMap<T>(kn->grad_buffer().data() + koff, ek, edk, stride) += gk;
        }
      }
    }
  });
}

/// Mean over the token axis: [B, N, D] -> [B, D].
template <typename T>
Tensor<T> mean_tokens(const Tensor<T>& x) {
  detail::require(x.rank() == 3, ErrorKind::kShapeMismatch, "mean_tokens expects [B x N x D]");
  const std::size_t batch = x.dim(0), n = x.dim(1), d = x.dim(2);
  std::vector<T> out(batch * d, T{0});
  const T inv = T{1} / static_cast<T>(n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) out[b * d + j] += x[(b * n + i) * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) out[b * d + j] *= inv;
  }
  Node<T>* xn = x.node();
  return make_result<T>("mean_tokens", {batch, d}, std::move(out), {x}, [=](const std::vector<T>& g) {
    auto& dst = xn->grad_buffer();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) dst[(b * n + i) * d + j] += g[b * d + j] * inv;
      }
    }
  });
}

/// [B, D1] ++ [B, D2] -> [B, D1 + D2].
template <typename T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0), ErrorKind::kShapeMismatch,
                  "concat_last: " + shape_str(a.dims()) + " ++ " + shape_str(b.dims()));
  const std::size_t rows = a.dim(0), da = a.dim(1), db = b.dim(1), dt = da + db;
  std::vector<T> out(rows * dt);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().data() + r * da, da, out.data() + r * dt);
    std::copy_n(b.data().data() + r * db, db, out.data() + r * dt + da);
  }
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return make_result<T>("concat", {rows, dt}, std::move(out), {a, b}, [=](const std::vector<T>& g) {
    for (std::size_t r = 0; r < rows; ++r) {
      if (an->requires_grad) {
        auto& dst = an->grad_buffer();
        for (std::size_t j = 0; j < da; ++j) dst[r * da + j] += g[r * dt + j];
      }
      if (bn->requires_grad) {
        auto& dst = bn->grad_buffer();
        for (std::size_t j = 0; j < db; ++j) dst[r * db + j] += g[r * dt + da + j];
      }
    }
  });
}

/// Rows of x [B, ...] at the given indices, in order.
template <typename T>
Tensor<T> select_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  const std::size_t width = x.size() / x.dim(0);
  Shape dims = x.dims();
  dims[0] = rows.size();
  std::vector<T> out(rows.size() * width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail::require(rows[i] < x.dim(0), ErrorKind::kShapeMismatch, "select_rows: index out of range");
    std::copy_n(x.data().data() + rows[i] * width, width, out.data() + i * width);
  }
  Node<T>* xn = x.node();
  return make_result<T>("select_rows", std::move(dims), std::move(out), {x}, [=](const std::vector<T>& g) {
    auto& dst = xn->grad_buffer();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < width; ++j) dst[rows[i] * width + j] += g[i * width + j];
    }
  });
}

/// Negative log-likelihood per row: -logp[b, label_b] -> [B].
template <typename T>
Tensor<T> nll_rows(const Tensor<T>& log_probs, const std::vector<int>& labels) {
  detail::require(log_probs.rank() == 2 && log_probs.dim(0) == labels.size(), ErrorKind::kShapeMismatch,
                  "nll_rows: labels do not match batch");
  const std::size_t rows = log_probs.dim(0), c = log_probs.dim(1);
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    detail::require(labels[r] >= 0 && static_cast<std::size_t>(labels[r]) < c, ErrorKind::kShapeMismatch,
                    "nll_rows: label out of range");
    out[r] = -log_probs[r * c + static_cast<std::size_t>(labels[r])];
  }
  Node<T>* ln = log_probs.node();
  return make_result<T>("nll", {rows}, std::move(out), {log_probs}, [=](const std::vector<T>& g) {
    auto& dst = ln->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) dst[r * c + static_cast<std::size_t>(labels[r])] -= g[r];
  });
}

/// Row-wise Jensen-Shannon divergence in nats, [B, C] x [B, C] -> [B].
/// Uses 0 log 0 = 0.
template <typename T>
Tensor<T> js_divergence_rows(const Tensor<T>& p, const Tensor<T>& q) {
  detail::require_same_shape(p, q, "js_divergence_rows");
  const std::size_t c = p.dims().back();
  const std::size_t rows = p.size() / c;
  auto xlogx_over = [](T a, T m) { return a > T{0} ? a * std::log(a / m) : T{0}; };
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T total{0};
    for (std::size_t j = 0; j < c; ++j) {
      const T a = p[r * c + j], b = q[r * c + j];
      const T m = T{0.5} * (a + b);
      total += T{0.5} * xlogx_over(a, m) + T{0.5} * xlogx_over(b, m);
    }
    out[r] = std::max(total, T{0});
  }
  Node<T>* pn = p.node();
  Node<T>* qn = q.node();
  return make_result<T>("js_divergence", {rows}, std::move(out), {p, q}, [=](const std::vector<T>& g) {
    // d/dp_i JS = 0.5 log(p_i / m_i), symmetric in q.
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t i = r * c + j;
        const T a = pn->value[i], b = qn->value[i];
        const T m = T{0.5} * (a + b);
        if (pn->requires_grad && a > T{0}) pn->grad_buffer()[i] += g[r] * T{0.5} * std::log(a / m);
        if (qn->requires_grad && b > T{0}) qn->grad_buffer()[i] += g[r] * T{0.5} * std::log(b / m);
      }
    }
  });
}

/// sum_i w_i x_i / denom over a flat tensor; scalar result.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, const std::vector<T>& weights, T denom = T{1}) {
  detail::require(weights.size() == x.size(), ErrorKind::kShapeMismatch, "weighted_sum: weight count");
  T total{0};
  for (std::size_t i = 0; i < x.size(); ++i) total += weights[i] * x[i];
  Node<T>* xn = x.node();
  return make_result<T>("weighted_sum", {1}, {total / denom}, {x}, [=](const std::vector<T>& g) {
    auto& dst = xn->grad_buffer();
    for (std::size_t i = 0; i < weights.size(); ++i) dst[i] += g[0] * weights[i] / denom;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return weighted_sum(x, std::vector<T>(x.size(), T{1}), static_cast<T>(x.size()));
}

/// sum_k w_k s_k over scalar tensors. Undefined entries are skipped.
template <typename T>
Tensor<T> combine_scalars(const std::vector<Tensor<T>>& terms, const std::vector<T>& weights) {
  detail::require(terms.size() == weights.size(), ErrorKind::kShapeMismatch, "combine_scalars: weight count");
  T total{0};
  std::vector<Tensor<T>> inputs;
  std::vector<Node<T>*> nodes;
  std::vector<T> used;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    if (!terms[k].defined()) continue;
    total += weights[k] * terms[k].item();
    inputs.push_back(terms[k]);
    nodes.push_back(terms[k].node());
    used.push_back(weights[k]);
  }
  return make_result<T>("combine", {1}, {total}, inputs, [=](const std::vector<T>& g) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k]->requires_grad) nodes[k]->grad_buffer()[0] += g[0] * used[k];
    }
  });
}

/// Each row divided by its L2 norm; all-zero rows stay zero.
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x) {
  const std::size_t d = x.dims().back();
  const std::size_t rows = x.size() / d;
  std::vector<T> out(x.size());
  auto norms = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T sq{0};
    for (std::size_t j = 0; j < d; ++j) sq += x[r * d + j] * x[r * d + j];
    const T norm = std::sqrt(sq);
    (*norms)[r] = norm;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = norm > T{0} ? x[r * d + j] / norm : T{0};
  }
  auto y = std::make_shared<std::vector<T>>(out);
  Node<T>* xn = x.node();
  return make_result<T>("l2_normalize", x.dims(), std::move(out), {x}, [=](const std::vector<T>& g) {
    auto& dst = xn->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T norm = (*norms)[r];
      if (norm <= T{0}) continue;
      T dot{0};
      for (std::size_t j = 0; j < d; ++j) dot += (*y)[r * d + j] * g[r * d + j];
      for (std::size_t j = 0; j < d; ++j) dst[r * d + j] += (g[r * d + j] - (*y)[r * d + j] * dot) / norm;
    }
  });
}

/// sum_i x_i w_i with constant weights; reduces any tensor to a scalar for
/// gradient checking.
template <typename T>
Tensor<T> dot_constant(const Tensor<T>& x, const std::vector<T>& weights) {
  return weighted_sum(x, weights, T{1});
}

}  // namespace damer
