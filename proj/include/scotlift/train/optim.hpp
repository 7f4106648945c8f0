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
#include <map>
#include <string>

#include "scotlift/core/params.hpp"

namespace scotlift::train {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

struct AdamState {
  long t = 0;
  std::map<std::string, Tensor<float>> m, v;
};

// Adam moments with decoupled weight decay: p <- p (1 - lr wd) - lr mhat / (sqrt(vhat) + eps).
// Parameters without a gradient are treated as having a zero gradient.
inline void adamw_update(ParamStore<float>& params, AdamState& s, double lr, const AdamWConfig& cfg = {}) {
  ++s.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
  for (auto& [name, var] : params.items()) {
    auto& m = s.m[name];
    auto& v = s.v[name];
    if (m.size() != var.size()) m = Tensor<float>(var.shape());
    if (v.size() != var.size()) v = Tensor<float>(var.shape());
    const bool has = var.has_grad();
    float* p = var.mutable_value().data();
    const float* g = has ? var.grad().data() : nullptr;
    const std::size_t n = var.size();
    const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
    const float decay = static_cast<float>(1.0 - lr * cfg.weight_decay);
    const float step = static_cast<float>(lr / bc1);
    const float inv_bc2 = static_cast<float>(1.0 / bc2);
    const float eps = static_cast<float>(cfg.eps);
    for (std::size_t i = 0; i < n; ++i) {
      const float gi = g ? g[i] : 0.0f;
      m[i] = b1 * m[i] + (1.0f - b1) * gi;
      v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
      p[i] = p[i] * decay - step * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    }
  }
}

}  // namespace scotlift::train
