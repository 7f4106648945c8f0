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

#include <filesystem>
#include <fstream>
#include <sstream>

#include "scotlift/eval/evaluate.hpp"
#include "scotlift/eval/metrics.hpp"

using namespace scotlift;
using namespace scotlift::eval;
namespace fs = std::filesystem;

namespace {

State random_state(std::size_t levels, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  State s(Shape{levels, h, w, 4});
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = i % 4 == 3 ? 1.0f : static_cast<float>(rng.normal());
  return s;
}

data::ScalerStats identity_stats(std::size_t levels) {
  data::ScalerStats s;
  s.levels = levels;
  s.mean.assign(3 * levels, 0.0);
  s.std.assign(3 * levels, 1.0);
  return s;
}

const std::vector<std::string> kVars{"T", "u", "v"};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("scotlift_eval_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

data::Series series_from(const std::vector<State>& states, std::vector<double> sols) {
  data::Series s;
  const auto& shape = states[0].shape();
  s.values = Tensor<float>(Shape{states.size(), shape[0], shape[1], shape[2], 4});
  for (std::size_t t = 0; t < states.size(); ++t)
    std::copy(states[t].storage().begin(), states[t].storage().end(), s.values.data() + t * states[t].size());
  s.sigmas = {0.9, 0.5};
  s.sols = std::move(sols);
  return s;
}

}  // namespace

TEST(Baselines, PersistenceRepeatsInitialState) {
  auto x0 = random_state(2, 3, 3, 1);
  auto p = persistence_forecast(x0, 4);
  ASSERT_EQ(p.size(), 4u);
  for (const auto& s : p) EXPECT_EQ(s, x0);
  EXPECT_TRUE(persistence_forecast(x0, 0).empty());
}

TEST(Rollout, ZeroStepsReturnsInitialState) {
  auto x0 = random_state(1, 2, 2, 2);
  auto r = rollout([](const State& s) { return s; }, x0, 0);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0], x0);
}

TEST(Rollout, ComposesModelAndKeepsAuxiliarySlot) {
  auto x0 = random_state(2, 2, 3, 3);
  for (std::size_t i = 3; i < x0.size(); i += 8) x0[i] = 0.0f;
  OneStep f = [](const State& s) {
    State o = s;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = 2.0f * s[i] + 1.0f;
    return o;
  };
  auto r = rollout(f, x0, 3);
  ASSERT_EQ(r.size(), 4u);
  State expected = x0;
  for (std::size_t t = 1; t <= 3; ++t) {
    expected = f(expected);
    for (std::size_t i = 3; i < x0.size(); i += 4) expected[i] = x0[i];
    EXPECT_EQ(r[t], expected);
  }
}

TEST(Rollout, NonFiniteStateRaisesDivergence) {
  auto x0 = random_state(1, 2, 2, 4);
  OneStep boom = [](const State& s) {
    State o = s;
    o[0] = std::numeric_limits<float>::infinity();
    return o;
  };
  try {
    rollout(boom, x0, 2);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 1);
  }
}

TEST(Metrics, ConstantOffsetGivesExactErrors) {
  auto truth = random_state(2, 4, 4, 5);
  auto fc = truth;
  for (std::size_t i = 0; i < fc.size(); ++i)
    if (i % 4 != 3) fc[i] += 2.0f;
  auto t = error_metrics({fc}, {truth}, identity_stats(2), {0.9, 0.5}, kVars, "m");
  for (const auto& v : kVars)
    for (double lvl : {0.9, 0.5}) {
      EXPECT_NEAR(t.at(v, lvl, 0, Metric::MAE, "m"), 2.0, 1e-5);
      EXPECT_NEAR(t.at(v, lvl, 0, Metric::MSE, "m"), 4.0, 1e-4);
    }
  EXPECT_THROW(t.at("T", 0.9, 1, Metric::MAE, "m"), LookupError);
}

TEST(Metrics, InverseScalingUsesPhysicalUnits) {
  auto truth = random_state(1, 2, 2, 6);
  auto fc = truth;
  fc[0] += 1.0f;
  auto stats = identity_stats(1);
  stats.std[0] = 10.0;
  stats.mean[0] = 250.0;
  auto t = error_metrics({fc}, {truth}, stats, {0.9}, kVars, "m");
  EXPECT_NEAR(t.at("T", 0.9, 0, Metric::MAE, "m"), 10.0 / 4.0, 1e-4);
  EXPECT_NEAR(t.at("u", 0.9, 0, Metric::MAE, "m"), 0.0, 1e-12);
}

TEST(Metrics, TableOrderIsSurfaceFirst) {
  MetricTable t;
  t.entries[{"T", 0.5, 1, Metric::MAE, "a"}] = 1;
  t.entries[{"T", 0.9, 1, Metric::MAE, "a"}] = 2;
  EXPECT_EQ(t.entries.begin()->first.level, 0.9);
}

TEST(Improvement, ReproducesPaperTables) {
  EXPECT_NEAR(improvement_pct(0.078625, 0.062886), 20.0, 0.05);
  EXPECT_NEAR(improvement_pct(0.142879, 0.093776), 34.4, 0.05);
  EXPECT_NEAR(improvement_pct(0.161899, 0.098258), 39.3, 0.05);
  EXPECT_NEAR(improvement_pct(0.179392, 0.118802), 33.8, 0.05);
  EXPECT_EQ(format_pct(improvement_pct(0.142879, 0.093776)), "34.4%");
  EXPECT_THROW(improvement_pct(0.0, 1.0), ContractError);
}

TEST(Overfit, VShapedCurve) {
  auto r = overfit_report(indexed_curve({1.0, 0.5, 0.8}));
  EXPECT_EQ(r.min_step, 1);
  EXPECT_DOUBLE_EQ(r.min_loss, 0.5);
  EXPECT_TRUE(r.overfitting);
  EXPECT_NEAR(r.rise_fraction, 0.6, 1e-12);
}

TEST(Overfit, MonotoneAndFlatCurves) {
  auto down = overfit_report(indexed_curve({1.0, 0.8, 0.6, 0.5}));
  EXPECT_FALSE(down.overfitting);
  EXPECT_EQ(down.min_step, 3);
  auto flat = overfit_report(indexed_curve({0.3, 0.3, 0.3}));
  EXPECT_FALSE(flat.overfitting);
  EXPECT_EQ(flat.rise_fraction, 0.0);
  EXPECT_FALSE(overfit_report(indexed_curve({1.0, 0.5, 0.505})).overfitting);
  EXPECT_THROW(overfit_report(indexed_curve({1.0, 0.5})), ContractError);
}

TEST(ErrorMaps, ShapeAndValues) {
  auto truth = random_state(2, 3, 5, 7);
  auto fc = truth;
  fc[(1 * 15 + 4) * 4 + 2] += 3.0f;
  auto maps = error_maps(fc, truth, identity_stats(2), {0.9, 0.5}, kVars);
  ASSERT_EQ(maps.size(), 6u);
  for (const auto& m : maps) EXPECT_EQ(m.abs_error.shape(), (Shape{3, 5}));
  double total = 0;
  for (const auto& m : maps)
    for (auto v : m.abs_error.storage()) total += v;
  EXPECT_NEAR(total, 3.0, 1e-5);
}

TEST(Emit, RegenerationIsByteIdentical) {
  auto truth = random_state(2, 3, 4, 8);
  auto fc = random_state(2, 3, 4, 9);
  Report r;
  r.metrics = error_metrics({truth, fc}, {truth, truth}, identity_stats(2), {0.9, 0.5}, kVars, "m");
  r.val_curves["m"] = {{0, 1.0}, {10, 0.5}};
  r.maps = error_maps(fc, truth, identity_stats(2), {0.9, 0.5}, kVars);
  r.sweep = sweep_rows(r.metrics, "m", 0.8);
  const auto a = fresh_dir("a"), b = fresh_dir("b");
  const auto files_a = emit_report(r, a);
  const auto files_b = emit_report(r, b);
  ASSERT_EQ(files_a.size(), files_b.size());
  for (std::size_t i = 0; i < files_a.size(); ++i) {
    EXPECT_EQ(files_a[i].filename(), files_b[i].filename());
    EXPECT_EQ(slurp(files_a[i]), slurp(files_b[i])) << files_a[i];
  }
  const auto header = slurp(a / "metrics.csv").substr(0, 38);
  EXPECT_EQ(header, "variable,level,lead,metric,model,value");
  EXPECT_TRUE(fs::exists(a / "sparsity_sweep.csv"));
  EXPECT_TRUE(fs::exists(a / "valcurve.csv"));
  EXPECT_EQ(fs::file_size(a / (errormap_name("T", 0.9) + ".f32")), 3u * 4u * 4u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Sweep, RowsComeFromLeadOneMae) {
  MetricTable t;
  t.entries[{"T", 0.9, 1, Metric::MAE, "m"}] = 1.5;
  t.entries[{"T", 0.9, 1, Metric::MSE, "m"}] = 9.0;
  t.entries[{"T", 0.9, 2, Metric::MAE, "m"}] = 7.0;
  t.entries[{"T", 0.9, 1, Metric::MAE, "other"}] = 3.0;
  auto rows = sweep_rows(t, "m", 0.8);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].mae, 1.5);
  EXPECT_EQ(rows[0].ratio, 0.8);
}

TEST(Evaluate, RolloutStartsNeedConsecutiveChains) {
  std::vector<State> states(6, random_state(2, 2, 2, 1));
  auto s = series_from(states, {0, 1, 2, 4, 5, 6});
  EXPECT_EQ(rollout_starts(s, 2), (std::vector<std::size_t>{0, 3}));
  EXPECT_EQ(rollout_starts(s, 1), (std::vector<std::size_t>{0, 1, 3, 4}));
  EXPECT_EQ(rollout_starts(s, 1, 2).size(), 2u);
}

TEST(Evaluate, PerfectModelBeatsPersistence) {
  std::vector<State> states;
  for (std::uint64_t t = 0; t < 4; ++t) states.push_back(random_state(2, 2, 2, 20 + t));
  auto series = series_from(states, {0, 1, 2, 3});
  OneStep oracle = [&](const State& x) {
    for (std::size_t t = 0; t + 1 < states.size(); ++t)
      if (x == states[t]) return states[t + 1];
    return x;
  };
  EvalOptions opt;
  opt.leads = 1;
  auto t = evaluate_rollouts(oracle, series, identity_stats(2), "oracle", opt);
  for (const auto& v : kVars) {
    EXPECT_EQ(t.at(v, 0.9, 0, Metric::MAE, "oracle"), 0.0);
    EXPECT_EQ(t.at(v, 0.9, 1, Metric::MAE, "oracle"), 0.0);
    EXPECT_GT(t.at(v, 0.9, 1, Metric::MAE, "persistence"), 0.0);
  }
}
