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

// Atmospheric data model: sigma grids, model-space channel layout, per
// channel-level standard scaling, spline regridding and column masking.

#include <gsl/gsl_errno.h>
#include <gsl/gsl_interp.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "scotlift/core/rng.hpp"
#include "scotlift/core/tensor.hpp"
#include "scotlift/model/config.hpp"

namespace scotlift::data {

using model::kChannels;
using model::kMaskChannel;
using model::kPhysicalChannels;

struct SigmaGrid {
  std::vector<double> sigmas;  // near-surface first
  std::size_t n_lat = 0;
  std::size_t n_lon = 0;

  std::size_t levels() const { return sigmas.size(); }

  void validate() const {
    require(!sigmas.empty(), "sigma grid has no levels");
    for (std::size_t d = 0; d < sigmas.size(); ++d) {
      require(sigmas[d] > 0.0 && sigmas[d] <= 1.0, "sigma[", d, "] = ", sigmas[d], " outside (0, 1]");
      if (d > 0) require(sigmas[d] < sigmas[d - 1], "sigmas must be strictly decreasing at index ", d);
    }
    require(n_lat >= 2 && n_lon >= 2, "grid needs at least 2x2 pixels, got ", n_lat, "x", n_lon);
  }
};

// Single-level column used for the one-level experiments.
inline const std::vector<double>& single_level_sigmas() {
  static const std::vector<double> s{0.87007517};
  return s;
}

// The 18-level column of the full-vertical experiments.
inline const std::vector<double>& multi_level_sigmas() {
  static const std::vector<double> s{0.9995,        0.99636,      0.9892728,      0.97349006,   0.93936884,
                                     0.87007517,    0.74549896,   0.5632723,      0.36277717,   0.20065443,
                                     0.099399455,   0.04613231,   0.020647187,    0.009001522,  0.0037814784,
                                     0.0014586191,  0.00044534708, 5.0824954e-05};
  return s;
}

// Six levels spread over the column (every third multi-level entry).
inline std::vector<double> desk_sigmas() {
  const auto& all = multi_level_sigmas();
  std::vector<double> s;
  for (std::size_t i = 0; i < all.size(); i += 3) s.push_back(all[i]);
  return s;
}

// Keeps a column wherever mask_field is 1.
struct MaskPattern {
  std::vector<std::size_t> kept;  // flat lat * n_lon + lon, ascending
  Tensor<float> mask_field;       // [lat, lon], 1 = present
  double ratio = 0.0;
};

inline std::size_t kept_count(std::size_t columns, double ratio) {
  return static_cast<std::size_t>(std::llround((1.0 - ratio) * static_cast<double>(columns)));
}

inline void check_ratio(double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    std::ostringstream msg;
    msg << "drop ratio must lie in [0, 1], got " << ratio;
    throw ConfigError("sparsity", msg.str());
  }
}

// Uniform choice of exactly round((1 - ratio) * N) columns without replacement.
inline MaskPattern make_mask(std::size_t n_lat, std::size_t n_lon, double ratio, std::uint64_t seed) {
  check_ratio(ratio);
  const std::size_t n = n_lat * n_lon;
  const std::size_t keep = kept_count(n, ratio);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < keep; ++i) std::swap(perm[i], perm[i + rng.below(n - i)]);
  MaskPattern m;
  m.ratio = ratio;
  m.kept.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(m.kept.begin(), m.kept.end());
  m.mask_field = Tensor<float>(Shape{n_lat, n_lon});
  for (auto k : m.kept) m.mask_field[k] = 1.0f;
  return m;
}

inline MaskPattern full_mask(std::size_t n_lat, std::size_t n_lon) { return make_mask(n_lat, n_lon, 0.0, 0); }

// Stacks T, u, v ([level, lat, lon] each) into [level, lat, lon, 4]. The
// auxiliary slot holds the mask when given, zeros otherwise.
inline Tensor<float> to_model_channels(const Tensor<float>& t, const Tensor<float>& u, const Tensor<float>& v,
                                       const MaskPattern* mask = nullptr) {
  require(t.rank() == 3, "to_model_channels: fields must be [level, lat, lon], got ", to_string(t.shape()));
  require(u.shape() == t.shape() && v.shape() == t.shape(), "to_model_channels: T ", to_string(t.shape()), ", u ",
          to_string(u.shape()), ", v ", to_string(v.shape()), " differ");
  const std::size_t levels = t.dim(0), cols = t.dim(1) * t.dim(2);
  if (mask)
    require(mask->mask_field.shape() == Shape{t.dim(1), t.dim(2)}, "to_model_channels: mask ",
            to_string(mask->mask_field.shape()), " does not match grid ", t.dim(1), "x", t.dim(2));
  Tensor<float> out(Shape{levels, t.dim(1), t.dim(2), kChannels});
  for (std::size_t d = 0; d < levels; ++d)
    for (std::size_t k = 0; k < cols; ++k) {
      const std::size_t i = d * cols + k;
      float* o = out.data() + i * kChannels;
      o[0] = t[i];
      o[1] = u[i];
      o[2] = v[i];
      o[3] = mask ? mask->mask_field[k] : 0.0f;
    }
  return out;
}

// Per (physical channel, level) population statistics. The auxiliary slot is
// never scaled.
struct ScalerStats {
  std::size_t levels = 0;
  std::vector<double> mean;  // [channel * levels + level]
  std::vector<double> std;
  std::string source;

  double mean_at(std::size_t c, std::size_t d) const { return mean[c * levels + d]; }
  double std_at(std::size_t c, std::size_t d) const { return std[c * levels + d]; }
};

inline constexpr double kMinStd = 1e-8;

// block: [time, level, lat, lon, 4] (or [level, lat, lon, 4] for one sample).
inline ScalerStats fit_scaler(const Tensor<float>& block, std::string source = "train") {
  require(block.rank() == 4 || block.rank() == 5, "fit_scaler: expected [time, level, lat, lon, C], got ",
          to_string(block.shape()));
  require(block.size() > 0, "fit_scaler: empty training block");
  const std::size_t r = block.rank();
  const std::size_t channels = block.dim(r - 1);
  require(channels >= kPhysicalChannels, "fit_scaler: need at least ", kPhysicalChannels, " channels");
  const std::size_t levels = block.dim(r - 4);
  const std::size_t times = r == 5 ? block.dim(0) : 1;
  const std::size_t cols = block.dim(r - 3) * block.dim(r - 2);
  ScalerStats s;
  s.levels = levels;
  s.source = std::move(source);
  s.mean.assign(kPhysicalChannels * levels, 0.0);
  s.std.assign(kPhysicalChannels * levels, 0.0);
  const double count = static_cast<double>(times * cols);
  for (std::size_t c = 0; c < kPhysicalChannels; ++c)
    for (std::size_t d = 0; d < levels; ++d) {
      double sum = 0.0;
      for (std::size_t t = 0; t < times; ++t)
        for (std::size_t k = 0; k < cols; ++k) sum += block[((t * levels + d) * cols + k) * channels + c];
      const double mu = sum / count;
      double sq = 0.0;
      for (std::size_t t = 0; t < times; ++t)
        for (std::size_t k = 0; k < cols; ++k) {
          const double e = block[((t * levels + d) * cols + k) * channels + c] - mu;
          sq += e * e;
        }
      s.mean[c * levels + d] = mu;
      s.std[c * levels + d] = std::max(std::sqrt(sq / count), kMinStd);
    }
  return s;
}

enum class Direction { Forward, Inverse };

// x: [..., level, lat, lon, C] with its level axis covering stats levels
// [level_offset, level_offset + D).
inline void apply_scaler(Tensor<float>& x, const ScalerStats& stats, Direction dir, std::size_t level_offset = 0) {
  require(x.rank() >= 4, "apply_scaler: expected [..., level, lat, lon, C], got ", to_string(x.shape()));
  const std::size_t r = x.rank();
  const std::size_t channels = x.dim(r - 1), levels = x.dim(r - 4), cols = x.dim(r - 3) * x.dim(r - 2);
  require(channels >= kPhysicalChannels, "apply_scaler: need at least ", kPhysicalChannels, " channels");
  require(level_offset + levels <= stats.levels, "apply_scaler: stats cover ", stats.levels, " levels, input needs ",
          level_offset + levels);
  const std::size_t outer = x.size() / (levels * cols * channels);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t d = 0; d < levels; ++d)
      for (std::size_t c = 0; c < kPhysicalChannels; ++c) {
        const double mu = stats.mean_at(c, level_offset + d), sd = stats.std_at(c, level_offset + d);
        float* base = x.data() + (o * levels + d) * cols * channels + c;
        for (std::size_t k = 0; k < cols; ++k) {
          const double v = base[k * channels];
          base[k * channels] = static_cast<float>(dir == Direction::Forward ? (v - mu) / sd : v * sd + mu);
        }
      }
}

inline Tensor<float> scaled(Tensor<float> x, const ScalerStats& stats, Direction dir, std::size_t level_offset = 0) {
  apply_scaler(x, stats, dir, level_offset);
  return x;
}

// Zeroes channels 0-2 of dropped columns on every level and writes the mask
// into the auxiliary slot. x: [level, lat, lon, 4].
inline void apply_mask(Tensor<float>& x, const MaskPattern& m) {
  require(x.rank() == 4 && x.dim(3) == kChannels, "apply_mask: expected [level, lat, lon, 4], got ",
          to_string(x.shape()));
  const std::size_t cols = x.dim(1) * x.dim(2);
  require(m.mask_field.size() == cols, "apply_mask: mask ", to_string(m.mask_field.shape()), " vs grid ", x.dim(1),
          "x", x.dim(2));
  for (std::size_t d = 0; d < x.dim(0); ++d)
    for (std::size_t k = 0; k < cols; ++k) {
      float* px = x.data() + (d * cols + k) * kChannels;
      const float keep = m.mask_field[k];
      if (keep == 0.0f) px[0] = px[1] = px[2] = 0.0f;
      px[kMaskChannel] = keep;
    }
}

struct Sparsified {
  Tensor<float> state;
  MaskPattern mask;
};

inline Sparsified sparsify_columns(Tensor<float> state, double ratio, std::uint64_t seed) {
  require(state.rank() == 4, "sparsify_columns: expected [level, lat, lon, 4], got ", to_string(state.shape()));
  auto mask = make_mask(state.dim(1), state.dim(2), ratio, seed);
  apply_mask(state, mask);
  return {std::move(state), std::move(mask)};
}

// ---------------------------------------------------------------------------
// Regridding. Latitudes are cell centres -90 + (i + 1/2) * 180 / n_lat,
// longitudes j * 360 / n_lon; longitude wraps, latitude queries beyond the
// outermost centres are clamped to them.

inline double lat_node(std::size_t i, std::size_t n) { return -90.0 + (static_cast<double>(i) + 0.5) * 180.0 / n; }
inline double lon_node(std::size_t j, std::size_t n) { return static_cast<double>(j) * 360.0 / n; }

namespace detail {

class Spline1D {
 public:
  Spline1D(const std::vector<double>& x, const std::vector<double>& y, int order, bool periodic) {
    static const bool handler_off = (gsl_set_error_handler_off(), true);
    (void)handler_off;
    const gsl_interp_type* type = order == 1 ? gsl_interp_linear : periodic ? gsl_interp_cspline_periodic : gsl_interp_cspline;
    interp_ = gsl_interp_alloc(type, x.size());
    accel_ = gsl_interp_accel_alloc();
    x_ = x;
    y_ = y;
    const int rc = gsl_interp_init(interp_, x_.data(), y_.data(), x_.size());
    if (rc != GSL_SUCCESS) {
      release();
      throw ContractError(std::string("regrid_spline: interpolation setup failed: ") + gsl_strerror(rc));
    }
  }
  ~Spline1D() { release(); }
  Spline1D(const Spline1D&) = delete;
  Spline1D& operator=(const Spline1D&) = delete;

  double operator()(double q) const {
    q = std::clamp(q, x_.front(), x_.back());
    return gsl_interp_eval(interp_, x_.data(), y_.data(), q, accel_);
  }

 private:
  void release() {
    if (interp_) gsl_interp_free(interp_);
    if (accel_) gsl_interp_accel_free(accel_);
    interp_ = nullptr;
    accel_ = nullptr;
  }
  gsl_interp* interp_ = nullptr;
  gsl_interp_accel* accel_ = nullptr;
  std::vector<double> x_, y_;
};

}  // namespace detail

// Tensor-product spline (degree 1 or 3) from [lat_in, lon_in] to [lat_out, lon_out].
inline Tensor<double> regrid_spline(const Tensor<double>& field, std::size_t lat_out, std::size_t lon_out,
                                    int order = 3) {
  require(order == 1 || order == 3, "regrid_spline: supported degrees are 1 and 3, got ", order);
  require(field.rank() == 2, "regrid_spline: expected [lat, lon], got ", to_string(field.shape()));
  const std::size_t nlat = field.dim(0), nlon = field.dim(1);
  const std::size_t need = static_cast<std::size_t>(order) + 1;
  require(nlat >= need && nlon >= need, "regrid_spline: degree ", order, " needs at least ", need,
          " samples per axis, got ", nlat, "x", nlon);
  require(lat_out >= 1 && lon_out >= 1, "regrid_spline: empty target grid");

  // Longitude pass, periodic: append the first sample at 360 degrees.
  Tensor<double> mid(Shape{nlat, lon_out});
  std::vector<double> x(nlon + 1), y(nlon + 1);
  for (std::size_t j = 0; j <= nlon; ++j) x[j] = lon_node(j, nlon);
  for (std::size_t i = 0; i < nlat; ++i) {
    for (std::size_t j = 0; j < nlon; ++j) y[j] = field.at(i, j);
    y[nlon] = y[0];
    detail::Spline1D s(x, y, order, true);
    for (std::size_t j = 0; j < lon_out; ++j) mid.at(i, j) = s(lon_node(j, lon_out));
  }

  Tensor<double> out(Shape{lat_out, lon_out});
  std::vector<double> xl(nlat), yl(nlat);
  for (std::size_t i = 0; i < nlat; ++i) xl[i] = lat_node(i, nlat);
  for (std::size_t j = 0; j < lon_out; ++j) {
    for (std::size_t i = 0; i < nlat; ++i) yl[i] = mid.at(i, j);
    detail::Spline1D s(xl, yl, order, false);
    for (std::size_t i = 0; i < lat_out; ++i) out.at(i, j) = s(lat_node(i, lat_out));
  }
  return out;
}

// Regrids every level and physical channel of [level, lat, lon, 4]; the
// auxiliary slot is reset to zero (masks are drawn on the target grid).
inline Tensor<float> regrid_state(const Tensor<float>& x, std::size_t lat_out, std::size_t lon_out, int order = 3) {
  require(x.rank() == 4 && x.dim(3) == kChannels, "regrid_state: expected [level, lat, lon, 4], got ",
          to_string(x.shape()));
  const std::size_t levels = x.dim(0), nlat = x.dim(1), nlon = x.dim(2);
  Tensor<float> out(Shape{levels, lat_out, lon_out, kChannels});
  Tensor<double> plane(Shape{nlat, nlon});
  for (std::size_t d = 0; d < levels; ++d)
    for (std::size_t c = 0; c < kPhysicalChannels; ++c) {
      for (std::size_t k = 0; k < nlat * nlon; ++k) plane[k] = x[(d * nlat * nlon + k) * kChannels + c];
      auto r = regrid_spline(plane, lat_out, lon_out, order);
      for (std::size_t k = 0; k < lat_out * lon_out; ++k)
        out[(d * lat_out * lon_out + k) * kChannels + c] = static_cast<float>(r[k]);
    }
  return out;
}

}  // namespace scotlift::data
