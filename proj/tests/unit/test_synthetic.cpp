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
#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numbers>

#include "scotlift/data/grid.hpp"
#include "scotlift/synthetic/corpus.hpp"

using namespace scotlift;
using namespace scotlift::synthetic;

namespace {

constexpr double kPi = std::numbers::pi;

Tensor<double> taylor_green(std::size_t n, double amp) {
  Tensor<double> w(Shape{n, n});
  const double h = 2.0 * kPi / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) w.at(i, j) = amp * 2.0 * std::cos(j * h) * std::cos(i * h);
  return w;
}

double mean(const Tensor<double>& w) {
  double s = 0;
  for (auto x : w.storage()) s += x;
  return s / static_cast<double>(w.size());
}

CorpusParams small_corpus() {
  CorpusParams p;
  p.flow.n = 16;
  p.flow.nu = 1e-2;
  p.flow.dt = 1e-2;
  p.flow.drag = 0.05;
  p.steps_per_snapshot = 5;
  p.forcing_rms = 0.3;
  return p;
}

StackParams3D small_stack(std::size_t levels, double kappa) {
  StackParams3D s;
  s.flow = small_corpus().flow;
  s.levels = levels;
  s.kappa = kappa;
  const auto all = data::multi_level_sigmas();
  s.sigmas.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(levels));
  return s;
}

}  // namespace

TEST(Ns2d, ZeroFieldIsFixedPoint) {
  FlowParams2D p;
  p.n = 16;
  Tensor<double> w(Shape{16, 16});
  auto next = ns2d_step(w, p);
  for (auto x : next.storage()) EXPECT_EQ(x, 0.0);
}

TEST(Ns2d, TaylorGreenDecaysExponentially) {
  FlowParams2D p;
  p.n = 32;
  p.nu = 0.05;
  p.dt = 0.01;
  auto w = taylor_green(32, 1.0);
  const auto w0 = w;
  for (int s = 1; s <= 100; ++s) {
    w = ns2d_step(w, p);
    const double expected = std::exp(-2.0 * p.nu * s * p.dt);
    for (std::size_t k = 0; k < w.size(); k += 37) {
      if (std::abs(w0[k]) < 1e-3) continue;
      EXPECT_NEAR(w[k] / w0[k], expected, 0.01 * expected);
    }
  }
}

TEST(Ns2d, MeanIsConserved) {
  FlowParams2D p;
  p.n = 32;
  auto w = band_limited_field(32, 1, 6, 1.0, 3);
  for (auto& x : w.storage()) x += 0.25;
  const double m0 = mean(w);
  for (int s = 0; s < 20; ++s) w = ns2d_step(w, p);
  EXPECT_NEAR(mean(w), m0, 1e-12);
}

TEST(Ns2d, UnforcedEnstrophyNonIncreasing) {
  FlowParams2D p;
  p.n = 32;
  p.nu = 1e-3;
  auto w = band_limited_field(32, 1, 8, 1.0, 4);
  double prev = enstrophy(w);
  for (int s = 0; s < 300; ++s) {
    w = ns2d_step(w, p);
    const double e = enstrophy(w);
    EXPECT_LE(e, prev * (1.0 + 1e-12)) << "step " << s;
    prev = e;
  }
}

TEST(Ns2d, VelocityIsDivergenceFree) {
  auto w = band_limited_field(32, 1, 8, 2.0, 5);
  auto vel = velocity(w);
  auto& g = spectral_grid(32);
  auto uh = g.forward(vel.u.data()), vh = g.forward(vel.v.data());
  double worst = 0, scale = 0;
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < g.half(); ++j) {
      const std::size_t k = i * g.half() + j;
      if (g.nyquist(i, j)) continue;
      const cplx div = cplx(0, 1) * (g.kx(j) * uh[k] + g.ky(i) * vh[k]);
      worst = std::max(worst, std::abs(div));
      scale = std::max({scale, std::abs(uh[k]), std::abs(vh[k])});
    }
  EXPECT_LT(worst, 1e-6 * std::max(scale, 1.0));
}

TEST(Ns2d, CflViolationRaisesStabilityError) {
  FlowParams2D p;
  p.n = 16;
  p.dt = 1.0;
  auto w = band_limited_field(16, 1, 3, 10.0, 6);
  EXPECT_THROW(ns2d_step(w, p), StabilityError);
  Tensor<double> bad(Shape{16, 16});
  bad[3] = std::nan("");
  p.dt = 0.01;
  EXPECT_THROW(ns2d_step(bad, p), StabilityError);
}

TEST(BandLimited, RmsAndZeroMean) {
  auto w = band_limited_field(32, 2, 5, 0.7, 9);
  double ss = 0;
  for (auto x : w.storage()) ss += x * x;
  EXPECT_NEAR(std::sqrt(ss / w.size()), 0.7, 1e-12);
  EXPECT_NEAR(mean(w), 0.0, 1e-12);
}

TEST(Pretrain, ShapeCountsAndDeterminism) {
  auto p = small_corpus();
  auto a = make_pretrain_corpus(p, 3, 4, 17);
  EXPECT_EQ(a.values.shape(), (Shape{12, 1, 16, 16, 4}));
  EXPECT_EQ(a.sols.size(), 12u);
  EXPECT_NO_THROW(a.validate());
  EXPECT_EQ(data::consecutive_pairs(a).size(), 9u);
  auto b = make_pretrain_corpus(p, 3, 4, 17);
  EXPECT_EQ(std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)), 0);
  auto c = make_pretrain_corpus(p, 3, 4, 18);
  EXPECT_NE(std::memcmp(a.values.data(), c.values.data(), a.values.size() * sizeof(float)), 0);
  for (std::size_t i = 3; i < a.values.size(); i += 4) EXPECT_EQ(a.values[i], 0.0f);
  EXPECT_EQ(a.attributes["channel0"], "vorticity");
}

TEST(VerticalDiffusion, IdenticalLevelsAreUnchanged) {
  auto f = band_limited_field(16, 1, 4, 1.0, 1);
  std::vector<Tensor<double>> col{f, f, f, f};
  vertical_diffusion(col, 0.3, 0.1);
  for (const auto& level : col)
    for (std::size_t k = 0; k < f.size(); ++k) EXPECT_EQ(level[k], f[k]);
}

TEST(VerticalDiffusion, TwoLevelExchange) {
  Tensor<double> a(Shape{16, 16}, 1.0), b(Shape{16, 16}, 3.0);
  std::vector<Tensor<double>> col{a, b};
  const double c = 0.2 * 0.5;
  vertical_diffusion(col, 0.2, 0.5);
  EXPECT_NEAR(col[0][0], 1.0 + c * 2.0, 1e-15);
  EXPECT_NEAR(col[1][0], 3.0 - c * 2.0, 1e-15);
}

TEST(VerticalDiffusion, ConservesLevelSum) {
  std::vector<Tensor<double>> col;
  for (std::uint64_t d = 0; d < 5; ++d) col.push_back(band_limited_field(16, 1, 4, 1.0 + d, 10 + d));
  std::vector<double> before(col[0].size());
  for (std::size_t k = 0; k < before.size(); ++k)
    for (const auto& l : col) before[k] += l[k];
  vertical_diffusion(col, 0.4, 0.1);
  for (std::size_t k = 0; k < before.size(); ++k) {
    double s = 0;
    for (const auto& l : col) s += l[k];
    EXPECT_NEAR(s, before[k], 1e-10);
  }
}

TEST(Finetune, ShapeAndSigmas) {
  auto p = small_corpus();
  auto stack = small_stack(6, 0.1);
  auto s = make_finetune_corpus(p, stack, 1, 12, 5);
  EXPECT_EQ(s.values.shape(), (Shape{12, 6, 16, 16, 4}));
  EXPECT_EQ(s.sigmas, stack.sigmas);
  EXPECT_NO_THROW(s.validate());
}

TEST(Finetune, ZeroCouplingGivesIndependentLevels) {
  auto p = small_corpus();
  auto stack = small_stack(3, 0.0);
  const auto forcing = level_forcing(p, 3, 21);
  auto col = level_initial(p, 3, 4);
  auto solo = col[1];
  for (int i = 0; i < 10; ++i) {
    col = stacked3d_step(col, stack, &forcing);
    solo = ns2d_step(solo, stack.flow, &forcing[1]);
  }
  for (std::size_t k = 0; k < solo.size(); ++k) EXPECT_EQ(col[1][k], solo[k]);
}

TEST(Finetune, UnstableCouplingRejected) {
  auto stack = small_stack(4, 60.0);
  EXPECT_THROW(stack.validate(), StabilityError);
  auto few = small_stack(4, 0.1);
  few.sigmas.pop_back();
  EXPECT_THROW(few.validate(), ContractError);
}
