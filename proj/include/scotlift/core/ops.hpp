/*
 * Copyright 2026 The scotlift Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Differentiable tensor operations. Every op computes its forward value
// eagerly and registers a closure that maps the output gradient onto its
// inputs. Matrix products run through Eigen maps over the row-major buffers.

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "scotlift/core/autodiff.hpp"

namespace scotlift::ops {

namespace detail {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<MatR<T>>;
template <typename T>
using CMap = Eigen::Map<const MatR<T>>;

inline void same_shape(const Shape& a, const Shape& b, const char* op) {
  require(a == b, op, ": shape mismatch ", to_string(a), " vs ", to_string(b));
}

// Strides of `b` as seen from `a`'s index space; broadcast axes get stride 0.
inline std::vector<std::size_t> broadcast_strides(const Shape& a, const Shape& b, const char* op) {
  require(a.size() == b.size(), op, ": broadcast needs equal rank, got ", to_string(a), " and ", to_string(b));
  auto st = strides_of(b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    require(b[i] == a[i] || b[i] == 1, op, ": cannot broadcast ", to_string(b), " to ", to_string(a));
    if (b[i] == 1 && a[i] != 1) st[i] = 0;
  }
  return st;
}

// Flat index into b for every flat index of a.
inline std::shared_ptr<std::vector<std::size_t>> broadcast_index(const Shape& a, const Shape& b, const char* op) {
  const auto st = broadcast_strides(a, b, op);
  auto idx = std::make_shared<std::vector<std::size_t>>(numel(a));
  if (idx->empty()) return idx;
  const std::size_t r = a.size();
  std::vector<std::size_t> counter(r, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < idx->size(); ++i) {
    (*idx)[i] = off;
    for (std::size_t ax = r; ax-- > 0;) {
      ++counter[ax];
      off += st[ax];
      if (counter[ax] < a[ax]) break;
      off -= st[ax] * a[ax];
      counter[ax] = 0;
    }
  }
  return idx;
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (auto* g = grad_target(self, p))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* g = grad_target(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_target(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = grad_target(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (auto* g = grad_target(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= c;
  return make_result<T>(std::move(out), {a}, [c](Node<T>& self) {
    if (auto* g = grad_target(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c * self.grad[i];
  });
}

// a + b where b broadcasts (NumPy rules, equal rank) onto a's shape.
template <typename T>
Var<T> add_bcast(const Var<T>& a, const Var<T>& b) {
  auto idx = detail::broadcast_index(a.shape(), b.shape(), "add_bcast");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[(*idx)[i]];
  return make_result<T>(std::move(out), {a, b}, [idx](Node<T>& self) {
    if (auto* g = grad_target(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_target(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[(*idx)[i]] += self.grad[i];
  });
}

// a * b where b broadcasts onto a's shape.
template <typename T>
Var<T> mul_bcast(const Var<T>& a, const Var<T>& b) {
  auto idx = detail::broadcast_index(a.shape(), b.shape(), "mul_bcast");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[(*idx)[i]];
  return make_result<T>(std::move(out), {a, b}, [idx](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = grad_target(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[(*idx)[i]];
    if (auto* g = grad_target(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[(*idx)[i]] += self.grad[i] * av[i];
  });
}

// y = x W + b over the last axis. x: [..., in], W: [in, out], b: [out] or undefined.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = Var<T>()) {
  require(w.rank() == 2, "linear: weight must be rank 2, got ", to_string(w.shape()));
  const std::size_t in = w.dim(0), out_dim = w.dim(1);
  require(x.rank() >= 1 && x.shape().back() == in, "linear: input ", to_string(x.shape()), " vs weight ",
          to_string(w.shape()));
  const bool has_bias = b.defined();
  if (has_bias) require(b.size() == out_dim, "linear: bias size ", b.size(), " != ", out_dim);
  const std::size_t rows = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  Tensor<T> out(out_shape);
  {
    detail::CMap<T> X(x.value().data(), rows, in);
    detail::CMap<T> W(w.value().data(), in, out_dim);
    detail::Map<T> Y(out.data(), rows, out_dim);
    Y.noalias() = X * W;
    if (has_bias) {
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> B(b.value().data(), out_dim);
      Y.rowwise() += B;
    }
  }
  std::vector<Var<T>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_result<T>(std::move(out), std::move(inputs), [rows, in, out_dim, has_bias](Node<T>& self) {
    detail::CMap<T> G(self.grad.data(), rows, out_dim);
    if (auto* g = grad_target(self, 0)) {
      detail::CMap<T> W(self.parents[1]->value.data(), in, out_dim);
      detail::Map<T> GX(g->data(), rows, in);
      GX.noalias() += G * W.transpose();
    }
    if (auto* g = grad_target(self, 1)) {
      detail::CMap<T> X(self.parents[0]->value.data(), rows, in);
      detail::Map<T> GW(g->data(), in, out_dim);
      GW.noalias() += X.transpose() * G;
    }
    if (has_bias) {
      if (auto* g = grad_target(self, 2)) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> GB(g->data(), out_dim);
        GB += G.colwise().sum();
      }
    }
  });
}

// Batched matmul. a: [B, M, K] (or [B, K, M] if trans_a), b: [B, K, N] (or [B, N, K] if trans_b).
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false) {
  require(a.rank() == 3 && b.rank() == 3, "bmm: rank-3 operands required, got ", to_string(a.shape()), " and ",
          to_string(b.shape()));
  const std::size_t batch = a.dim(0);
  require(b.dim(0) == batch, "bmm: batch mismatch");
  const std::size_t ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
  const std::size_t m = trans_a ? ac : ar, k = trans_a ? ar : ac;
  const std::size_t kb = trans_b ? bc : br, n = trans_b ? br : bc;
  require(k == kb, "bmm: inner dims ", k, " vs ", kb);
  Tensor<T> out(Shape{batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    detail::CMap<T> A(a.value().data() + i * ar * ac, ar, ac);
    detail::CMap<T> Bm(b.value().data() + i * br * bc, br, bc);
    detail::Map<T> C(out.data() + i * m * n, m, n);
    if (!trans_a && !trans_b) C.noalias() = A * Bm;
    else if (!trans_a && trans_b) C.noalias() = A * Bm.transpose();
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * Bm;
    else C.noalias() = A.transpose() * Bm.transpose();
  }
  return make_result<T>(std::move(out), {a, b}, [=](Node<T>& self) {
    auto* ga = grad_target(self, 0);
    auto* gb = grad_target(self, 1);
    for (std::size_t i = 0; i < batch; ++i) {
      detail::CMap<T> G(self.grad.data() + i * m * n, m, n);
      detail::CMap<T> A(self.parents[0]->value.data() + i * ar * ac, ar, ac);
      detail::CMap<T> Bm(self.parents[1]->value.data() + i * br * bc, br, bc);
      if (ga) {
        detail::Map<T> GA(ga->data() + i * ar * ac, ar, ac);
        // C = op(A) op(B); dop(A) = G op(B)^T
        if (!trans_a && !trans_b) GA.noalias() += G * Bm.transpose();
        else if (!trans_a && trans_b) GA.noalias() += G * Bm;
        else if (trans_a && !trans_b) GA.noalias() += Bm * G.transpose();
        else GA.noalias() += Bm.transpose() * G.transpose();
      }
      if (gb) {
        detail::Map<T> GB(gb->data() + i * br * bc, br, bc);
        if (!trans_a && !trans_b) GB.noalias() += A.transpose() * G;
        else if (!trans_a && trans_b) GB.noalias() += G.transpose() * A;
        else if (trans_a && !trans_b) GB.noalias() += A * G;
        else GB.noalias() += G.transpose() * A.transpose();
      }
    }
  });
}

// Layer normalization over the last axis with affine gamma/beta of that size.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const std::size_t c = x.shape().back();
  require(gamma.size() == c && beta.size() == c, "layer_norm: affine size mismatch for width ", c);
  const std::size_t rows = x.size() / c;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  const T* xv = x.value().data();
  const T* gv = gamma.value().data();
  const T* bv = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv + r * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= T(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(c);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (row[j] - mean) * rs;
      (*xhat)[r * c + j] = h;
      out[r * c + j] = h * gv[j] + bv[j];
    }
  }
  return make_result<T>(std::move(out), {x, gamma, beta}, [=](Node<T>& self) {
    const T* g = self.grad.data();
    const T* gv = self.parents[1]->value.data();
    auto* gx = grad_target(self, 0);
    auto* gg = grad_target(self, 1);
    auto* gb = grad_target(self, 2);
    std::vector<T> dh(c);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* h = xhat->data() + r * c;
      const T* gr = g + r * c;
      if (gg)
        for (std::size_t j = 0; j < c; ++j) (*gg)[j] += gr[j] * h[j];
      if (gb)
        for (std::size_t j = 0; j < c; ++j) (*gb)[j] += gr[j];
      if (gx) {
        T sum_dh = 0, sum_dh_h = 0;
        for (std::size_t j = 0; j < c; ++j) {
          dh[j] = gr[j] * gv[j];
          sum_dh += dh[j];
          sum_dh_h += dh[j] * h[j];
        }
        const T rs = (*rstd)[r];
        for (std::size_t j = 0; j < c; ++j)
          (*gx)[r * c + j] += rs * (dh[j] - sum_dh / T(c) - h[j] * sum_dh_h / T(c));
      }
    }
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::gelu(x.value()[i]);
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = grad_target(self, 0)) {
      const auto& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * detail::gelu_grad(xv[i]);
    }
  });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.value()[i]);
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = grad_target(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * self.value[i];
  });
}

// min(x, hi); gradient passes only where x < hi.
template <typename T>
Var<T> clamp_max(const Var<T>& x, T hi) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(x.value()[i], hi);
  return make_result<T>(std::move(out), {x}, [hi](Node<T>& self) {
    if (auto* g = grad_target(self, 0)) {
      const auto& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i)
        if (xv[i] < hi) (*g)[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> softmax_last(const Var<T>& x) {
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.size() / c;
  Tensor<T> out(x.shape());
  const T* xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv + r * c;
    T* o = out.data() + r * c;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, row[j]);
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) o[j] /= s;
  }
  return make_result<T>(std::move(out), {x}, [c, rows](Node<T>& self) {
    auto* g = grad_target(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * c;
      const T* gy = self.grad.data() + r * c;
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < c; ++j) (*g)[r * c + j] += y[j] * (gy[j] - dot);
    }
  });
}

// Softmax over the last axis of z = logits * scale[h] + bias[h] + mask[w],
// fused for windowed attention. logits: [B, heads, L, L] where the batch
// index runs window-fastest (b = n * windows + w); scale: [heads];
// bias: [heads, L, L]; mask: constant [windows, L, L] or empty.
template <typename T>
Var<T> scaled_biased_softmax(const Var<T>& logits, const Var<T>& scale, const Var<T>& bias,
                             std::shared_ptr<const Tensor<T>> mask = nullptr) {
  require(logits.rank() == 4 && logits.dim(2) == logits.dim(3), "scaled_biased_softmax: logits must be [B, H, L, L]");
  const std::size_t nb = logits.dim(0), heads = logits.dim(1), l = logits.dim(2);
  require(scale.size() == heads, "scaled_biased_softmax: scale needs ", heads, " entries");
  require(bias.size() == heads * l * l, "scaled_biased_softmax: bias must be [heads, L, L]");
  std::size_t windows = 1;
  if (mask) {
    require(mask->rank() == 3 && mask->dim(1) == l && mask->dim(2) == l, "scaled_biased_softmax: mask must be [W, L, L]");
    windows = mask->dim(0);
    require(nb % windows == 0, "scaled_biased_softmax: batch ", nb, " not a multiple of ", windows, " windows");
  }
  Tensor<T> out(logits.shape());
  const T* lv = logits.value().data();
  const T* sv = scale.value().data();
  const T* bv = bias.value().data();
  for (std::size_t b = 0; b < nb; ++b) {
    const T* mv = mask ? mask->data() + (b % windows) * l * l : nullptr;
    for (std::size_t h = 0; h < heads; ++h) {
      const T s = sv[h];
      for (std::size_t r = 0; r < l; ++r) {
        const std::size_t off = ((b * heads + h) * l + r) * l;
        const T* brow = bv + (h * l + r) * l;
        T* o = out.data() + off;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t q = 0; q < l; ++q) {
          o[q] = lv[off + q] * s + brow[q] + (mv ? mv[r * l + q] : T(0));
          mx = std::max(mx, o[q]);
        }
        T sum = 0;
        for (std::size_t q = 0; q < l; ++q) sum += (o[q] = std::exp(o[q] - mx));
        const T inv = T(1) / sum;
        for (std::size_t q = 0; q < l; ++q) o[q] *= inv;
      }
    }
  }
  return make_result<T>(std::move(out), {logits, scale, bias}, [nb, heads, l](Node<T>& self) {
    auto* gl = grad_target(self, 0);
    auto* gs = grad_target(self, 1);
    auto* gb = grad_target(self, 2);
    const T* lv = self.parents[0]->value.data();
    const T* sv = self.parents[1]->value.data();
    std::vector<T> gz(l);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t r = 0; r < l; ++r) {
          const std::size_t off = ((b * heads + h) * l + r) * l;
          const T* y = self.value.data() + off;
          const T* gy = self.grad.data() + off;
          T dot = 0;
          for (std::size_t q = 0; q < l; ++q) dot += y[q] * gy[q];
          T ds = 0;
          for (std::size_t q = 0; q < l; ++q) {
            gz[q] = y[q] * (gy[q] - dot);
            ds += gz[q] * lv[off + q];
          }
          if (gl)
            for (std::size_t q = 0; q < l; ++q) (*gl)[off + q] += gz[q] * sv[h];
          if (gs) (*gs)[h] += ds;
          if (gb) {
            T* gbrow = gb->data() + (h * l + r) * l;
            for (std::size_t q = 0; q < l; ++q) gbrow[q] += gz[q];
          }
        }
  });
}

// x / max(||x||, eps) over the last axis.
template <typename T>
Var<T> l2_normalize_last(const Var<T>& x, T eps = T(1e-12)) {
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.size() / c;
  Tensor<T> out(x.shape());
  auto norms = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.value().data() + r * c;
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += row[j] * row[j];
    const T n = std::max(std::sqrt(s), eps);
    (*norms)[r] = n;
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = row[j] / n;
  }
  return make_result<T>(std::move(out), {x}, [c, rows, norms, eps](Node<T>& self) {
    auto* g = grad_target(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T n = (*norms)[r];
      const T* y = self.value.data() + r * c;
      const T* gy = self.grad.data() + r * c;
      if (n <= eps) {
        for (std::size_t j = 0; j < c; ++j) (*g)[r * c + j] += gy[j] / n;
        continue;
      }
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < c; ++j) (*g)[r * c + j] += (gy[j] - y[j] * dot) / n;
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  require(numel(shape) == x.size(), "reshape: cannot view ", to_string(x.shape()), " as ", to_string(shape));
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& parent = *self.parents[0];
    if (!parent.requires_grad) return;
    if (parent.grad.size() != parent.value.size()) {
      // First contribution: hand the buffer over instead of copying.
      parent.grad = std::move(self.grad);
      parent.grad.reshape_inplace(parent.value.shape());
      return;
    }
    for (std::size_t i = 0; i < parent.grad.size(); ++i) parent.grad[i] += self.grad[i];
  });
}

template <typename T>
Var<T> permute(const Var<T>& x, std::vector<std::size_t> axes) {
  Tensor<T> out = scotlift::permute(x.value(), axes);
  return make_result<T>(std::move(out), {x}, [axes](Node<T>& self) {
    if (auto* g = grad_target(self, 0)) {
      Tensor<T> back = scotlift::permute(self.grad, inverse_permutation(axes));
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += back[i];
    }
  });
}

// out.flat[i] = x.flat[index[i]]; the backward pass scatter-adds.
template <typename T>
Var<T> gather(const Var<T>& x, std::shared_ptr<const std::vector<std::size_t>> index, Shape out_shape) {
  require(numel(out_shape) == index->size(), "gather: index size ", index->size(), " vs output ",
          to_string(out_shape));
  Tensor<T> out(std::move(out_shape));
  const T* xv = x.value().data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t j = (*index)[i];
    require(j < n, "gather: index ", j, " out of range ", n);
    out[i] = xv[j];
  }
  return make_result<T>(std::move(out), {x}, [index](Node<T>& self) {
    if (auto* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[(*index)[i]] += self.grad[i];
  });
}

template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape l = p.shape();
    widths.push_back(l.back());
    total += l.back();
    l.pop_back();
    require(l == lead, "concat_last: leading shapes differ");
  }
  const std::size_t rows = numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor<T> out(out_shape);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].value().data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src + r * widths[k], widths[k], out.data() + r * total + off);
    off += widths[k];
  }
  return make_result<T>(std::move(out), parts, [rows, total, widths](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (auto* g = grad_target(self, k))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) (*g)[r * widths[k] + j] += self.grad[r * total + off + j];
      off += widths[k];
    }
  });
}

// Columns [begin, end) of the last axis.
template <typename T>
Var<T> slice_last(const Var<T>& x, std::size_t begin, std::size_t end) {
  const std::size_t c = x.shape().back();
  require(begin < end && end <= c, "slice_last: bad range [", begin, ", ", end, ") for width ", c);
  const std::size_t w = end - begin;
  const std::size_t rows = x.size() / c;
  Shape out_shape = x.shape();
  out_shape.back() = w;
  Tensor<T> out(out_shape);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.value().data() + r * c + begin, w, out.data() + r * w);
  return make_result<T>(std::move(out), {x}, [rows, c, w, begin](Node<T>& self) {
    if (auto* g = grad_target(self, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) (*g)[r * c + begin + j] += self.grad[r * w + j];
  });
}

// Depthwise k x k convolution on [N, H, W, C] with zero padding k/2 ("same").
// weight: [k, k, C], bias: [C].
template <typename T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require(x.rank() == 4, "depthwise_conv2d: input must be [N, H, W, C], got ", to_string(x.shape()));
  require(weight.rank() == 3 && weight.dim(0) == weight.dim(1) && weight.dim(0) % 2 == 1,
          "depthwise_conv2d: weight must be [k, k, C] with odd k");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3), k = weight.dim(0);
  require(weight.dim(2) == c && bias.size() == c, "depthwise_conv2d: channel mismatch");
  const long r = static_cast<long>(k / 2);
  Tensor<T> out(x.shape());
  const T* xv = x.value().data();
  const T* wv = weight.value().data();
  const T* bv = bias.value().data();
  for (std::size_t b = 0; b < n; ++b)
    for (long i = 0; i < long(h); ++i)
      for (long j = 0; j < long(w); ++j) {
        T* o = out.data() + ((b * h + i) * w + j) * c;
        std::copy_n(bv, c, o);
        for (long di = 0; di < long(k); ++di) {
          const long ii = i + di - r;
          if (ii < 0 || ii >= long(h)) continue;
          for (long dj = 0; dj < long(k); ++dj) {
            const long jj = j + dj - r;
            if (jj < 0 || jj >= long(w)) continue;
            const T* xi = xv + ((b * h + ii) * w + jj) * c;
            const T* wk = wv + (di * k + dj) * c;
            for (std::size_t ch = 0; ch < c; ++ch) o[ch] += wk[ch] * xi[ch];
          }
        }
      }
  return make_result<T>(std::move(out), {x, weight, bias}, [=](Node<T>& self) {
    auto* gx = grad_target(self, 0);
    auto* gw = grad_target(self, 1);
    auto* gb = grad_target(self, 2);
    const T* xv = self.parents[0]->value.data();
    const T* wv = self.parents[1]->value.data();
    for (std::size_t b = 0; b < n; ++b)
      for (long i = 0; i < long(h); ++i)
        for (long j = 0; j < long(w); ++j) {
          const T* g = self.grad.data() + ((b * h + i) * w + j) * c;
          if (gb)
            for (std::size_t ch = 0; ch < c; ++ch) (*gb)[ch] += g[ch];
          for (long di = 0; di < long(k); ++di) {
            const long ii = i + di - r;
            if (ii < 0 || ii >= long(h)) continue;
            for (long dj = 0; dj < long(k); ++dj) {
              const long jj = j + dj - r;
              if (jj < 0 || jj >= long(w)) continue;
              const std::size_t xo = ((b * h + ii) * w + jj) * c;
              const std::size_t wo = (di * k + dj) * c;
              if (gx)
                for (std::size_t ch = 0; ch < c; ++ch) (*gx)[xo + ch] += wv[wo + ch] * g[ch];
              if (gw)
                for (std::size_t ch = 0; ch < c; ++ch) (*gw)[wo + ch] += xv[xo + ch] * g[ch];
            }
          }
        }
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  T s = 0;
  for (T v : x.value().storage()) s += v;
  return make_result<T>(Tensor<T>::scalar(s), {x}, [](Node<T>& self) {
    if (auto* g = grad_target(self, 0))
      for (auto& v : g->storage()) v += self.grad[0];
  });
}

// Σ x ⊙ w for a constant weight tensor; handy as a projection loss for gradient checks.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, Tensor<T> w) {
  detail::same_shape(x.shape(), w.shape(), "weighted_sum");
  T s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.value()[i] * w[i];
  auto wp = std::make_shared<Tensor<T>>(std::move(w));
  return make_result<T>(Tensor<T>::scalar(s), {x}, [wp](Node<T>& self) {
    if (auto* g = grad_target(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0] * (*wp)[i];
  });
}

}  // namespace scotlift::ops
