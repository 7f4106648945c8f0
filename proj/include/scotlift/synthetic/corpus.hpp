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

// Synthetic corpora in archive layout.
//
// Pretraining: independent forced 2D flows, one level, channels
// (vorticity, u, v, 0). Fine-tuning: D stacked layers, each a forced 2D flow
// with its own forcing, coupled by explicit vertical diffusion of vorticity.
// Consecutive trajectories are separated by a two-step gap in sol time so
// that no supervised pair straddles them.

#include <cstring>
#include <vector>

#include "scotlift/data/archive.hpp"
#include "scotlift/synthetic/ns2d.hpp"

namespace scotlift::synthetic {

struct StackParams3D {
  FlowParams2D flow;
  std::size_t levels = 6;
  double kappa = 0.1;  // vertical coupling rate
  std::vector<double> sigmas;

  void validate() const {
    flow.validate();
    require(levels >= 2, "stack needs at least 2 levels, got ", levels);
    require(kappa >= 0.0, "kappa must be non-negative");
    if (!(kappa * flow.dt < 0.5))
      throw StabilityError("vertical diffusion unstable: kappa*dt = " + std::to_string(kappa * flow.dt) + " >= 0.5");
    require(sigmas.size() == levels, "stack has ", levels, " levels but ", sigmas.size(), " sigmas");
  }
};

// f_d += kappa dt (f_{d-1} - 2 f_d + f_{d+1}), one-sided at the ends.
inline void vertical_diffusion(std::vector<Tensor<double>>& column, double kappa, double dt) {
  const std::size_t d_count = column.size();
  if (d_count < 2 || kappa == 0.0) return;
  const double c = kappa * dt;
  const std::size_t n = column[0].size();
  std::vector<double> lap(d_count);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t d = 0; d < d_count; ++d) {
      const double f = column[d][k];
      double l = 0.0;
      if (d > 0) l += column[d - 1][k] - f;
      if (d + 1 < d_count) l += column[d + 1][k] - f;
      lap[d] = l;
    }
    for (std::size_t d = 0; d < d_count; ++d) column[d][k] += c * lap[d];
  }
}

inline std::vector<Tensor<double>> stacked3d_step(const std::vector<Tensor<double>>& column, const StackParams3D& p,
                                                  const std::vector<Tensor<double>>* forcing = nullptr) {
  p.validate();
  require(column.size() == p.levels, "stacked3d_step: ", column.size(), " fields for ", p.levels, " levels");
  if (forcing) require(forcing->size() == p.levels, "stacked3d_step: one forcing field per level required");
  std::vector<Tensor<double>> out;
  out.reserve(column.size());
  for (std::size_t d = 0; d < column.size(); ++d)
    out.push_back(ns2d_step(column[d], p.flow, forcing ? &(*forcing)[d] : nullptr));
  vertical_diffusion(out, p.kappa, p.flow.dt);
  return out;
}

struct CorpusParams {
  FlowParams2D flow;
  std::size_t steps_per_snapshot = 50;
  std::size_t spinup_steps = 0;
  double init_kmin = 1.0, init_kmax = 4.0, init_rms = 1.0;
  double forcing_kmin = 3.0, forcing_kmax = 5.0;
  double forcing_rms = 0.1;
};

namespace detail {

// Writes (w, u, v, 0) of one level into a [.., n, n, 4] slot.
inline void store_level(float* dst, const Tensor<double>& w) {
  const auto vel = velocity(w);
  for (std::size_t k = 0; k < w.size(); ++k) {
    dst[k * 4 + 0] = static_cast<float>(w[k]);
    dst[k * 4 + 1] = static_cast<float>(vel.u[k]);
    dst[k * 4 + 2] = static_cast<float>(vel.v[k]);
    dst[k * 4 + 3] = 0.0f;
  }
}

inline double snapshot_dt(const CorpusParams& p) { return p.flow.dt * static_cast<double>(p.steps_per_snapshot); }

inline nlohmann::ordered_json describe(const CorpusParams& p, std::uint64_t seed) {
  return {{"generator", "pseudo-spectral vorticity"},
          {"channel0", "vorticity"},
          {"n", p.flow.n},
          {"nu", p.flow.nu},
          {"dt", p.flow.dt},
          {"drag", p.flow.drag},
          {"steps_per_snapshot", p.steps_per_snapshot},
          {"seed", seed}};
}

}  // namespace detail

// Trajectory i uses seeds derived from (seed, i); forcing amplitude varies
// between trajectories for diversity.
inline data::Series make_pretrain_corpus(const CorpusParams& p, std::size_t n_traj, std::size_t snapshots,
                                         std::uint64_t seed) {
  p.flow.validate();
  require(n_traj >= 1 && snapshots >= 1, "make_pretrain_corpus: counts must be >= 1");
  const std::size_t n = p.flow.n, per = n * n * 4;
  const double step = detail::snapshot_dt(p);
  data::Series s;
  s.variables = {"T", "u", "v"};
  s.sigmas = {1.0};
  s.step = step;
  s.attributes = detail::describe(p, seed);
  s.values = Tensor<float>(Shape{n_traj * snapshots, 1, n, n, 4});
  for (std::size_t t = 0; t < n_traj; ++t) {
    const std::uint64_t ts = mix_seed(seed, t);
    Rng rng(ts);
    const double amp = p.forcing_rms * rng.uniform(0.5, 1.5);
    const auto f = band_limited_field(n, p.forcing_kmin, p.forcing_kmax, amp, mix_seed(ts, 1));
    auto w = band_limited_field(n, p.init_kmin, p.init_kmax, p.init_rms, mix_seed(ts, 2));
    for (std::size_t i = 0; i < p.spinup_steps; ++i) w = ns2d_step(w, p.flow, &f);
    for (std::size_t k = 0; k < snapshots; ++k) {
      if (k > 0)
        for (std::size_t i = 0; i < p.steps_per_snapshot; ++i) w = ns2d_step(w, p.flow, &f);
      const std::size_t idx = t * snapshots + k;
      detail::store_level(s.values.data() + idx * per, w);
      s.sols.push_back(static_cast<double>(t * (snapshots + 1) + k) * step);
    }
  }
  return s;
}

// Level d has its own forcing pattern and amplitude (fixed across trajectories);
// initial conditions are independent per trajectory and level.
inline std::vector<Tensor<double>> level_forcing(const CorpusParams& p, std::size_t levels, std::uint64_t seed) {
  std::vector<Tensor<double>> f;
  for (std::size_t d = 0; d < levels; ++d) {
    const double amp = p.forcing_rms * (0.5 + static_cast<double>(d) / static_cast<double>(levels));
    f.push_back(band_limited_field(p.flow.n, p.forcing_kmin, p.forcing_kmax, amp, mix_seed(seed, 1000 + d)));
  }
  return f;
}

inline std::vector<Tensor<double>> level_initial(const CorpusParams& p, std::size_t levels, std::uint64_t traj_seed) {
  std::vector<Tensor<double>> col;
  for (std::size_t d = 0; d < levels; ++d)
    col.push_back(band_limited_field(p.flow.n, p.init_kmin, p.init_kmax, p.init_rms, mix_seed(traj_seed, d)));
  return col;
}

inline data::Series make_finetune_corpus(const CorpusParams& p, const StackParams3D& stack, std::size_t n_traj,
                                         std::size_t snapshots, std::uint64_t seed) {
  stack.validate();
  require(n_traj >= 1 && snapshots >= 1, "make_finetune_corpus: counts must be >= 1");
  require(stack.flow.n == p.flow.n, "make_finetune_corpus: grid mismatch");
  const std::size_t n = p.flow.n, levels = stack.levels, per_level = n * n * 4;
  const double step = detail::snapshot_dt(p);
  data::Series s;
  s.variables = {"T", "u", "v"};
  s.sigmas = stack.sigmas;
  s.step = step;
  s.attributes = detail::describe(p, seed);
  s.attributes["kappa"] = stack.kappa;
  s.values = Tensor<float>(Shape{n_traj * snapshots, levels, n, n, 4});
  const auto forcing = level_forcing(p, levels, seed);
  for (std::size_t t = 0; t < n_traj; ++t) {
    auto col = level_initial(p, levels, mix_seed(seed, t));
    for (std::size_t i = 0; i < p.spinup_steps; ++i) col = stacked3d_step(col, stack, &forcing);
    for (std::size_t k = 0; k < snapshots; ++k) {
      if (k > 0)
        for (std::size_t i = 0; i < p.steps_per_snapshot; ++i) col = stacked3d_step(col, stack, &forcing);
      const std::size_t idx = t * snapshots + k;
      for (std::size_t d = 0; d < levels; ++d)
        detail::store_level(s.values.data() + (idx * levels + d) * per_level, col[d]);
      s.sols.push_back(static_cast<double>(t * (snapshots + 1) + k) * step);
    }
  }
  return s;
}

}  // namespace scotlift::synthetic
