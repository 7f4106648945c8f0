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

#include "scotlift/eval/metrics.hpp"
#include "scotlift/train/trainer.hpp"

namespace scotlift::eval {

// Indices t whose next `leads` timestamps are each one native step apart.
inline std::vector<std::size_t> rollout_starts(const data::Series& s, std::size_t leads, std::size_t max_samples = 0) {
  const auto pairs = data::consecutive_pairs(s);
  std::vector<bool> ok(s.times(), false);
  for (auto t : pairs) ok[t] = true;
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t + leads < s.times(); ++t) {
    bool chain = true;
    for (std::size_t k = 0; k < leads && chain; ++k) chain = ok[t + k];
    if (chain) out.push_back(t);
    if (max_samples > 0 && out.size() == max_samples) break;
  }
  return out;
}

// The same per-sample mask the validation loss uses.
inline std::uint64_t sample_mask_seed(std::uint64_t seed, std::size_t sample) { return mix_seed(seed ^ 0x5eed5eedULL, sample); }

inline State masked_state(const State& x, double ratio, std::uint64_t mask_seed) {
  State out = x;
  data::apply_mask(out, data::make_mask(x.dim(1), x.dim(2), ratio, mask_seed));
  return out;
}

// One-step map of a lifted model over a [level, lat, lon, 4] state.
inline OneStep lifted_step(const train::Model& m, const std::vector<double>& sigmas) {
  return [&m, sigmas](const State& x) {
    Shape batched{1};
    batched.insert(batched.end(), x.shape().begin(), x.shape().end());
    return m.predict(x.reshaped(batched), sigmas).reshaped(x.shape());
  };
}

struct EvalOptions {
  std::size_t leads = 1;
  double ratio = 0.0;
  std::size_t max_samples = 0;
  std::uint64_t seed = 0;
  bool persistence = true;
};

// Mean over initial states of the per-lead metrics. `scaled` is the validation
// series in model space. Lead 0 compares the dense initial state with itself.
inline MetricTable evaluate_rollouts(const OneStep& step, const data::Series& scaled, const data::ScalerStats& stats,
                                     const std::string& model_id, const EvalOptions& opt) {
  const auto starts = rollout_starts(scaled, opt.leads, opt.max_samples);
  require(!starts.empty(), "evaluate_rollouts: no initial state has ", opt.leads, " consecutive successors");
  MetricTable sum;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const std::size_t t0 = starts[i];
    std::vector<State> truths;
    for (std::size_t k = 0; k <= opt.leads; ++k) truths.push_back(scaled.state(t0 + k));
    auto forecasts = rollout(step, masked_state(truths[0], opt.ratio, sample_mask_seed(opt.seed, t0)), opt.leads);
    forecasts[0] = truths[0];
    sum.merge_add(error_metrics(forecasts, truths, stats, scaled.sigmas, scaled.variables, model_id));
    if (opt.persistence) {
      std::vector<State> pers{truths[0]};
      for (auto& s : persistence_forecast(truths[0], opt.leads)) pers.push_back(std::move(s));
      sum.merge_add(error_metrics(pers, truths, stats, scaled.sigmas, scaled.variables, "persistence"));
    }
  }
  for (auto& [_, v] : sum.entries) v /= static_cast<double>(starts.size());
  return sum;
}

// One row per (level, variable) from the lead-1 MAE of `model_id`.
inline std::vector<SweepRow> sweep_rows(const MetricTable& t, const std::string& model_id, double ratio) {
  std::vector<SweepRow> rows;
  for (const auto& [k, v] : t.entries)
    if (k.model == model_id && k.lead == 1 && k.metric == Metric::MAE) rows.push_back({k.level, ratio, k.variable, model_id, v});
  return rows;
}

}  // namespace scotlift::eval
