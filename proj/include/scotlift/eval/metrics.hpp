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

// Baselines, rollout, physical-unit metrics and report emission.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "scotlift/data/archive.hpp"

namespace scotlift::eval {

namespace fs = std::filesystem;

using State = Tensor<float>;  // [level, lat, lon, 4], scaled model space
using OneStep = std::function<State(const State&)>;

// n forecasts, each equal to x0.
inline std::vector<State> persistence_forecast(const State& x0, std::size_t n_steps) {
  return std::vector<State>(n_steps, x0);
}

// [x0, f(x0), f(f(x0)), ...] with the auxiliary slot of x0 re-imposed after every step.
inline std::vector<State> rollout(const OneStep& model, const State& x0, std::size_t n_steps) {
  require(x0.rank() >= 1 && x0.shape().back() == data::kChannels, "rollout: expected [..., 4] state, got ",
          to_string(x0.shape()));
  std::vector<State> out{x0};
  const std::size_t cells = x0.size() / data::kChannels;
  for (std::size_t t = 1; t <= n_steps; ++t) {
    State next = model(out.back());
    require(next.shape() == x0.shape(), "rollout: model changed the state shape to ", to_string(next.shape()));
    for (std::size_t k = 0; k < cells; ++k)
      next[k * data::kChannels + data::kMaskChannel] = x0[k * data::kChannels + data::kMaskChannel];
    if (!next.all_finite()) throw DivergenceError(static_cast<long>(t), "non-finite state in rollout");
    out.push_back(std::move(next));
  }
  return out;
}

enum class Metric { MAE, MSE };
inline const char* metric_name(Metric m) { return m == Metric::MAE ? "MAE" : "MSE"; }

struct MetricKey {
  std::string variable;
  double level;  // sigma
  std::size_t lead;
  Metric metric;
  std::string model;

  bool operator<(const MetricKey& o) const {
    // Levels sort near-surface first (descending sigma).
    return std::make_tuple(model, variable, -level, lead, metric) <
           std::make_tuple(o.model, o.variable, -o.level, o.lead, o.metric);
  }
};

struct MetricTable {
  std::map<MetricKey, double> entries;

  double at(const std::string& var, double level, std::size_t lead, Metric m, const std::string& model) const {
    auto it = entries.find({var, level, lead, m, model});
    if (it == entries.end()) throw LookupError("no metric for " + model + "/" + var + " lead " + std::to_string(lead));
    return it->second;
  }

  void merge(const MetricTable& o) {
    for (const auto& [k, v] : o.entries) entries[k] = v;
  }

  void merge_add(const MetricTable& o) {
    for (const auto& [k, v] : o.entries) entries[k] += v;
  }
};

// Per (variable, level, lead): MAE and MSE after inverse scaling, unweighted
// over the lat/lon grid. forecasts[i] is compared with truths[i] at lead i.
inline MetricTable error_metrics(const std::vector<State>& forecasts, const std::vector<State>& truths,
                                 const data::ScalerStats& stats, const std::vector<double>& sigmas,
                                 const std::vector<std::string>& variables, const std::string& model,
                                 std::size_t level_offset = 0) {
  require(forecasts.size() == truths.size(), "error_metrics: ", forecasts.size(), " forecasts vs ", truths.size(),
          " truths");
  require(variables.size() == data::kPhysicalChannels, "error_metrics: need ", data::kPhysicalChannels,
          " variable names");
  MetricTable table;
  for (std::size_t lead = 0; lead < forecasts.size(); ++lead) {
    require(forecasts[lead].shape() == truths[lead].shape(), "error_metrics: shape mismatch at lead ", lead);
    require(forecasts[lead].rank() == 4 && forecasts[lead].dim(0) == sigmas.size(),
            "error_metrics: expected [level, lat, lon, 4] with ", sigmas.size(), " levels");
    const auto f = data::scaled(forecasts[lead], stats, data::Direction::Inverse, level_offset);
    const auto t = data::scaled(truths[lead], stats, data::Direction::Inverse, level_offset);
    const std::size_t cols = f.dim(1) * f.dim(2);
    for (std::size_t d = 0; d < sigmas.size(); ++d)
      for (std::size_t c = 0; c < data::kPhysicalChannels; ++c) {
        double ae = 0.0, se = 0.0;
        for (std::size_t k = 0; k < cols; ++k) {
          const std::size_t i = (d * cols + k) * data::kChannels + c;
          const double e = static_cast<double>(f[i]) - t[i];
          ae += std::abs(e);
          se += e * e;
        }
        table.entries[{variables[c], sigmas[d], lead, Metric::MAE, model}] = ae / static_cast<double>(cols);
        table.entries[{variables[c], sigmas[d], lead, Metric::MSE, model}] = se / static_cast<double>(cols);
      }
  }
  return table;
}

// 100 (random - pretrained) / random.
inline double improvement_pct(double loss_random, double loss_pretrained) {
  require(loss_random > 0.0, "improvement_pct: random-init loss must be positive, got ", loss_random);
  return 100.0 * (loss_random - loss_pretrained) / loss_random;
}

inline std::string format_pct(double pct) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", pct);
  return buf;
}

struct OverfitReport {
  std::size_t min_index = 0;
  long min_step = 0;
  double min_loss = 0.0;
  bool overfitting = false;
  double rise_fraction = 0.0;
};

inline constexpr double kOverfitThreshold = 0.02;

// Overfitting when the final loss exceeds the minimum by more than 2%.
inline OverfitReport overfit_report(const std::vector<std::pair<long, double>>& curve) {
  require(curve.size() >= 3, "overfit_report: need at least 3 points, got ", curve.size());
  OverfitReport r;
  r.min_loss = curve[0].second;
  for (std::size_t i = 1; i < curve.size(); ++i)
    if (curve[i].second < r.min_loss) {
      r.min_loss = curve[i].second;
      r.min_index = i;
    }
  r.min_step = curve[r.min_index].first;
  r.rise_fraction = curve.back().second / r.min_loss - 1.0;
  r.overfitting = r.rise_fraction > kOverfitThreshold;
  return r;
}

inline std::vector<std::pair<long, double>> indexed_curve(const std::vector<double>& losses) {
  std::vector<std::pair<long, double>> c;
  for (std::size_t i = 0; i < losses.size(); ++i) c.emplace_back(static_cast<long>(i), losses[i]);
  return c;
}

// ---------------------------------------------------------------------------
// Report files

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

struct ErrorMap {
  std::string variable;
  double level;
  Tensor<float> abs_error;  // [lat, lon]
};

// |forecast - truth| per pixel in physical units, one map per (variable, level).
inline std::vector<ErrorMap> error_maps(const State& forecast, const State& truth, const data::ScalerStats& stats,
                                        const std::vector<double>& sigmas, const std::vector<std::string>& variables) {
  require(forecast.shape() == truth.shape() && forecast.rank() == 4, "error_maps: mismatched states");
  const auto f = data::scaled(forecast, stats, data::Direction::Inverse);
  const auto t = data::scaled(truth, stats, data::Direction::Inverse);
  const std::size_t h = f.dim(1), w = f.dim(2);
  std::vector<ErrorMap> maps;
  for (std::size_t c = 0; c < data::kPhysicalChannels; ++c)
    for (std::size_t d = 0; d < sigmas.size(); ++d) {
      ErrorMap m{variables[c], sigmas[d], Tensor<float>(Shape{h, w})};
      for (std::size_t k = 0; k < h * w; ++k) {
        const std::size_t i = (d * h * w + k) * data::kChannels + c;
        m.abs_error[k] = std::abs(f[i] - t[i]);
      }
      maps.push_back(std::move(m));
    }
  return maps;
}

struct SweepRow {
  double level;
  double ratio;
  std::string variable;
  std::string model;
  double mae;
};

struct Report {
  MetricTable metrics;
  std::map<std::string, std::vector<std::pair<long, double>>> val_curves;  // by model id
  std::vector<ErrorMap> maps;
  std::vector<SweepRow> sweep;
};

namespace detail {

inline std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream out(p, mode);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

}  // namespace detail

inline std::string errormap_name(const std::string& var, double level) { return "errormap_" + var + "_" + fmt(level); }

// errormap_<var>_<level>.f32 (little-endian float32, lat-major) plus a CSV copy.
inline std::vector<fs::path> emit_error_maps(const std::vector<ErrorMap>& maps, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
  std::vector<fs::path> written;
  for (const auto& m : maps) {
    const auto base = errormap_name(m.variable, m.level);
    auto raw = dir / (base + ".f32");
    std::vector<char> bytes(m.abs_error.size() * 4);
    std::memcpy(bytes.data(), m.abs_error.data(), bytes.size());
    data::detail::to_little_endian(bytes);
    data::detail::write_file(raw, bytes.data(), bytes.size());
    auto csv = dir / (base + ".csv");
    auto out = detail::open_out(csv);
    for (std::size_t i = 0; i < m.abs_error.dim(0); ++i) {
      for (std::size_t j = 0; j < m.abs_error.dim(1); ++j) out << (j ? "," : "") << fmt(m.abs_error.at(i, j));
      out << '\n';
    }
    written.push_back(raw);
    written.push_back(csv);
  }
  return written;
}

// Writes metrics.csv, valcurve.csv, errormap_<var>_<level>.{f32,csv} and
// sparsity_sweep.csv into `dir` (created if needed). Output depends only on
// the report contents.
inline std::vector<fs::path> emit_report(const Report& r, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
  std::vector<fs::path> written;
  {
    auto p = dir / "metrics.csv";
    auto out = detail::open_out(p);
    out << "variable,level,lead,metric,model,value\n";
    for (const auto& [k, v] : r.metrics.entries)
      out << k.variable << ',' << fmt(k.level) << ',' << k.lead << ',' << metric_name(k.metric) << ',' << k.model << ','
          << fmt(v) << '\n';
    written.push_back(p);
  }
  {
    auto p = dir / "valcurve.csv";
    auto out = detail::open_out(p);
    out << "step,model,loss\n";
    for (const auto& [model, curve] : r.val_curves)
      for (const auto& [step, loss] : curve) out << step << ',' << model << ',' << fmt(loss) << '\n';
    written.push_back(p);
  }
  for (auto& p : emit_error_maps(r.maps, dir)) written.push_back(std::move(p));
  if (!r.sweep.empty()) {
    auto p = dir / "sparsity_sweep.csv";
    auto out = detail::open_out(p);
    out << "level,ratio,variable,model,mae\n";
    for (const auto& s : r.sweep)
      out << fmt(s.level) << ',' << fmt(s.ratio) << ',' << s.variable << ',' << s.model << ',' << fmt(s.mae) << '\n';
    written.push_back(p);
  }
  return written;
}

}  // namespace scotlift::eval
