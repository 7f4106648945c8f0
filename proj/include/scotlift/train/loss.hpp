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

#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "scotlift/core/autodiff.hpp"

namespace scotlift::train {

inline constexpr double kLossEps = 1e-10;

// Channels entering the objective: all of them by default.
inline std::vector<std::size_t> all_channels(std::size_t c) {
  std::vector<std::size_t> out(c);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

namespace detail {

struct ChannelSums {
  std::vector<double> abs_err, abs_ref;
};

template <typename T>
ChannelSums channel_sums(const Tensor<T>& pred, const Tensor<T>& target, const std::vector<std::size_t>& channels) {
  require(pred.shape() == target.shape(), "normalized_l1: shape mismatch ", to_string(pred.shape()), " vs ",
          to_string(target.shape()));
  require(pred.rank() >= 1, "normalized_l1: scalar input");
  const std::size_t c_all = pred.shape().back();
  require(!channels.empty(), "normalized_l1: no channels selected");
  for (auto c : channels) require(c < c_all, "normalized_l1: channel ", c, " out of ", c_all);
  ChannelSums s{std::vector<double>(c_all, 0.0), std::vector<double>(c_all, 0.0)};
  const std::size_t rows = pred.size() / c_all;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < c_all; ++c) {
      const double x = target[r * c_all + c];
      s.abs_err[c] += std::abs(static_cast<double>(pred[r * c_all + c]) - x);
      s.abs_ref[c] += std::abs(x);
    }
  return s;
}

}  // namespace detail

// L = (1/C) sum_c sum|pred - target| / (sum|target| + eps), sums over every
// axis but the last (channel) one. Accumulates in double.
template <typename T>
double normalized_l1_value(const Tensor<T>& pred, const Tensor<T>& target, const std::vector<std::size_t>& channels,
                           double eps = kLossEps) {
  const auto s = detail::channel_sums(pred, target, channels);
  double l = 0.0;
  for (auto c : channels) l += s.abs_err[c] / (s.abs_ref[c] + eps);
  return l / static_cast<double>(channels.size());
}

template <typename T>
double normalized_l1_value(const Tensor<T>& pred, const Tensor<T>& target) {
  return normalized_l1_value(pred, target, all_channels(pred.shape().back()));
}

// Differentiable form; the subgradient of |.| at 0 is taken as 0.
template <typename T>
Var<T> normalized_l1(const Var<T>& pred, const Tensor<T>& target, const std::vector<std::size_t>& channels,
                     double eps = kLossEps) {
  const auto s = detail::channel_sums(pred.value(), target, channels);
  double l = 0.0;
  const std::size_t c_all = pred.shape().back();
  std::vector<double> weight(c_all, 0.0);
  for (auto c : channels) {
    l += s.abs_err[c] / (s.abs_ref[c] + eps);
    weight[c] = 1.0 / ((s.abs_ref[c] + eps) * static_cast<double>(channels.size()));
  }
  l /= static_cast<double>(channels.size());
  auto tgt = std::make_shared<const Tensor<T>>(target);
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(l)), {pred}, [tgt, weight, c_all](Node<T>& self) {
    auto* g = grad_target(self, 0);
    if (!g) return;
    const auto& pv = self.parents[0]->value;
    const double up = self.grad[0];
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double d = static_cast<double>(pv[i]) - (*tgt)[i];
      if (d == 0.0) continue;
      (*g)[i] += static_cast<T>(up * weight[i % c_all] * (d > 0.0 ? 1.0 : -1.0));
    }
  });
}

template <typename T>
Var<T> normalized_l1(const Var<T>& pred, const Tensor<T>& target) {
  return normalized_l1(pred, target, all_channels(pred.shape().back()));
}

// 0.5 lr0 (1 + cos(pi s / T)).
inline double cosine_lr(long step, long total, double lr0) {
  require(total >= 1, "cosine_lr: total steps must be >= 1");
  require(step >= 0 && step <= total, "cosine_lr: step ", step, " outside [0, ", total, "]");
  const double lr = 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
  return std::max(lr, 0.0);
}

}  // namespace scotlift::train
