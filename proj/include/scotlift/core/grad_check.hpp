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

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "scotlift/core/params.hpp"

namespace scotlift {

// A scalar-valued function of a parameter collection. Inputs that should be
// differentiated are stored in the collection alongside the weights.
using DifferentiableFn = std::function<Var<double>(const ParamStore<double>&)>;

struct GradCheckOptions {
  double tol = 1e-4;
  // Differences below this are finite-difference roundoff. The relative
  // error denominator is floored at atol / tol, so a coordinate whose true
  // gradient is zero passes when |analytic - numeric| < atol.
  double atol = 1e-8;
  // Coordinates checked: every coordinate when the collection is at most this
  // large, otherwise a seeded random subset of this size (never below 64) that
  // touches every tensor at least once.
  std::size_t max_coords = 256;
  double step = 1e-5;
  std::uint64_t seed = 7;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

namespace detail {

inline double eval_scalar(const DifferentiableFn& f, const ParamStore<double>& p) {
  NoGradGuard guard;
  Var<double> out = f(p);
  if (out.size() != 1) throw ContractError("grad_check: function output must be scalar, got " + to_string(out.shape()));
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw EvaluationError("grad_check: non-finite forward value");
  return v;
}

}  // namespace detail

inline GradCheckReport grad_check(const DifferentiableFn& f, ParamStore<double>& point,
                                  const GradCheckOptions& opt = {}) {
  for (const auto& [name, v] : point.items())
    if (!v.value().all_finite()) throw EvaluationError("grad_check: non-finite entry in '" + name + "'");

  point.zero_grad();
  Var<double> out = f(point);
  if (out.size() != 1) throw ContractError("grad_check: function output must be scalar, got " + to_string(out.shape()));
  if (!std::isfinite(out.value()[0])) throw EvaluationError("grad_check: non-finite forward value");
  backward(out);

  struct Coord {
    std::string name;
    std::size_t index;
  };
  std::vector<Coord> coords;
  const std::size_t total = point.count();
  const std::size_t budget = std::max<std::size_t>(opt.max_coords, 64);
  if (total <= budget) {
    for (const auto& [name, v] : point.items())
      for (std::size_t i = 0; i < v.size(); ++i) coords.push_back({name, i});
  } else {
    Rng rng(opt.seed);
    for (const auto& [name, v] : point.items()) coords.push_back({name, rng.below(v.size())});
    while (coords.size() < budget) {
      std::uint64_t flat = rng.below(total);
      for (const auto& [name, v] : point.items()) {
        if (flat < v.size()) {
          coords.push_back({name, static_cast<std::size_t>(flat)});
          break;
        }
        flat -= v.size();
      }
    }
  }

  GradCheckReport rep;
  for (const auto& c : coords) {
    Var<double>& param = point.get(c.name);
    const double analytic = param.has_grad() ? param.grad()[c.index] : 0.0;
    double& x = param.mutable_value()[c.index];
    const double x0 = x;
    const double h = opt.step * (std::abs(x0) + 1.0);
    x = x0 + h;
    const double fp = detail::eval_scalar(f, point);
    x = x0 - h;
    const double fm = detail::eval_scalar(f, point);
    x = x0;
    const double numeric = (fp - fm) / (2.0 * h);
    const double rel =
        std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), opt.atol / opt.tol});
    ++rep.checked;
    if (rel > rep.max_rel_err || rep.checked == 1) {
      rep.max_rel_err = rel;
      rep.worst_param = c.name;
      rep.worst_index = c.index;
      rep.worst_analytic = analytic;
      rep.worst_numeric = numeric;
    }
  }
  point.zero_grad();
  rep.passed = rep.max_rel_err < opt.tol;
  return rep;
}

}  // namespace scotlift
