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

// Pseudo-spectral 2D incompressible flow in vorticity form on [0, 2pi)^2:
//
//   dw/dt + u . grad(w) = nu lap(w) - mu w + F,   u = (d psi/dy, -d psi/dx),  -lap(psi) = w
//
// Linear terms are integrated exactly (integrating factor), the advection
// term by classical RK4 in the integrating-factor frame (Lawson RK4), with
// 2/3-rule dealiasing. The k = 0 mode is never touched, so the mean
// vorticity is conserved. Fields are [n, n] with row index along y.

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "scotlift/core/errors.hpp"
#include "scotlift/core/rng.hpp"
#include "scotlift/core/tensor.hpp"

namespace scotlift::synthetic {

using cplx = std::complex<double>;

struct FlowParams2D {
  std::size_t n = 64;
  double nu = 1e-3;
  double dt = 1e-2;
  double drag = 0.0;  // linear (Rayleigh) damping rate mu

  double dx() const { return 2.0 * std::numbers::pi / static_cast<double>(n); }

  void validate() const {
    require(n >= 16 && (n & (n - 1)) == 0, "flow grid n must be a power of two >= 16, got ", n);
    require(nu > 0.0, "viscosity must be positive, got ", nu);
    require(dt > 0.0, "time step must be positive, got ", dt);
    require(drag >= 0.0, "drag must be non-negative, got ", drag);
  }
};

namespace detail {

template <typename T>
struct FftwFree {
  void operator()(T* p) const { fftw_free(p); }
};

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace detail

// FFT workspace and spectral operators for one grid size. Not thread-safe;
// use one instance per thread.
class SpectralGrid {
 public:
  explicit SpectralGrid(std::size_t n) : n_(n), nh_(n / 2 + 1) {
    real_.reset(fftw_alloc_real(n * n));
    spec_.reset(fftw_alloc_complex(n * nh_));
    std::lock_guard lock(detail::fftw_planner_mutex());
    const int ni = static_cast<int>(n);
    // ESTIMATE keeps the chosen algorithm, and hence the bits, run-independent.
    fwd_ = fftw_plan_dft_r2c_2d(ni, ni, real_.get(), spec_.get(), FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_2d(ni, ni, spec_.get(), real_.get(), FFTW_ESTIMATE);
    if (!fwd_ || !inv_) throw Error("FFTW plan creation failed");
    kx_.resize(nh_);
    ky_.resize(n);
    for (std::size_t j = 0; j < nh_; ++j) kx_[j] = static_cast<double>(j);
    for (std::size_t i = 0; i < n; ++i) ky_[i] = i <= n / 2 ? static_cast<double>(i) : static_cast<double>(i) - n;
    const double cut = static_cast<double>(n) / 3.0;
    keep_.resize(n * nh_);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < nh_; ++j)
        keep_[i * nh_ + j] = std::abs(kx_[j]) < cut && std::abs(ky_[i]) < cut;
  }
  ~SpectralGrid() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
  }
  SpectralGrid(const SpectralGrid&) = delete;
  SpectralGrid& operator=(const SpectralGrid&) = delete;

  std::size_t n() const { return n_; }
  std::size_t half() const { return nh_; }
  std::size_t spectral_size() const { return n_ * nh_; }
  double kx(std::size_t j) const { return kx_[j]; }
  double ky(std::size_t i) const { return ky_[i]; }
  double k2(std::size_t i, std::size_t j) const { return kx_[j] * kx_[j] + ky_[i] * ky_[i]; }
  bool dealias_keep(std::size_t idx) const { return keep_[idx]; }
  bool nyquist(std::size_t i, std::size_t j) const { return i == n_ / 2 || j == n_ / 2; }

  // Normalized forward transform: hat[k] = (1/n^2) sum f[x] e^{-ikx}.
  std::vector<cplx> forward(const double* f) {
    std::copy(f, f + n_ * n_, real_.get());
    fftw_execute(fwd_);
    std::vector<cplx> out(spectral_size());
    const double s = 1.0 / static_cast<double>(n_ * n_);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = cplx(spec_.get()[k][0], spec_.get()[k][1]) * s;
    return out;
  }

  void inverse(const std::vector<cplx>& hat, double* f) {
    for (std::size_t k = 0; k < hat.size(); ++k) {
      spec_.get()[k][0] = hat[k].real();
      spec_.get()[k][1] = hat[k].imag();
    }
    fftw_execute(inv_);
    std::copy(real_.get(), real_.get() + n_ * n_, f);
  }

  // Velocity spectra from vorticity spectrum.
  void velocity_hat(const std::vector<cplx>& w, std::vector<cplx>& u, std::vector<cplx>& v) const {
    u.assign(w.size(), cplx(0));
    v.assign(w.size(), cplx(0));
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < nh_; ++j) {
        const std::size_t k = i * nh_ + j;
        const double kk = k2(i, j);
        if (kk == 0.0 || nyquist(i, j)) continue;
        const cplx psi = w[k] / kk;
        u[k] = cplx(0, ky_[i]) * psi;
        v[k] = cplx(0, -kx_[j]) * psi;
      }
  }

 private:
  std::size_t n_, nh_;
  std::unique_ptr<double, detail::FftwFree<double>> real_;
  std::unique_ptr<fftw_complex, detail::FftwFree<fftw_complex>> spec_;
  fftw_plan fwd_ = nullptr, inv_ = nullptr;
  std::vector<double> kx_, ky_;
  std::vector<char> keep_;
};

// Per-thread workspace cache keyed by grid size.
inline SpectralGrid& spectral_grid(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<SpectralGrid>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<SpectralGrid>(n);
  return *slot;
}

struct Velocity {
  Tensor<double> u, v;
};

inline Velocity velocity(const Tensor<double>& w) {
  require(w.rank() == 2 && w.dim(0) == w.dim(1), "velocity: expected square [n, n] field, got ", to_string(w.shape()));
  auto& g = spectral_grid(w.dim(0));
  std::vector<cplx> uh, vh;
  g.velocity_hat(g.forward(w.data()), uh, vh);
  Velocity out{Tensor<double>(w.shape()), Tensor<double>(w.shape())};
  g.inverse(uh, out.u.data());
  g.inverse(vh, out.v.data());
  return out;
}

// Mean of w^2 / 2 over the grid.
inline double enstrophy(const Tensor<double>& w) {
  double s = 0.0;
  for (auto x : w.values()) s += 0.5 * x * x;
  return s / static_cast<double>(w.size());
}

inline double max_speed(const Velocity& vel) {
  double m = 0.0;
  for (std::size_t k = 0; k < vel.u.size(); ++k) m = std::max({m, std::abs(vel.u[k]), std::abs(vel.v[k])});
  return m;
}

inline void check_cfl(const Tensor<double>& w, const FlowParams2D& p) {
  const double c = max_speed(velocity(w)) * p.dt / p.dx();
  if (!(c < 0.5)) throw StabilityError("CFL number " + std::to_string(c) + " >= 0.5 (dt " + std::to_string(p.dt) + ")");
}

namespace detail {

// -(u . grad w), dealiased, plus forcing; zero at k = 0.
inline std::vector<cplx> nonlinear(SpectralGrid& g, const std::vector<cplx>& w, const std::vector<cplx>* forcing) {
  const std::size_t n = g.n(), nh = g.half(), m = g.spectral_size();
  std::vector<cplx> uh, vh, wx(m), wy(m);
  g.velocity_hat(w, uh, vh);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < nh; ++j) {
      const std::size_t k = i * nh + j;
      if (g.nyquist(i, j)) continue;
      wx[k] = cplx(0, g.kx(j)) * w[k];
      wy[k] = cplx(0, g.ky(i)) * w[k];
    }
  std::vector<double> u(n * n), v(n * n), a(n * n), b(n * n);
  g.inverse(uh, u.data());
  g.inverse(vh, v.data());
  g.inverse(wx, a.data());
  g.inverse(wy, b.data());
  for (std::size_t k = 0; k < n * n; ++k) a[k] = u[k] * a[k] + v[k] * b[k];
  auto out = g.forward(a.data());
  for (std::size_t k = 0; k < m; ++k) {
    out[k] = g.dealias_keep(k) ? -out[k] : cplx(0);
    if (forcing) out[k] += (*forcing)[k];
  }
  out[0] = cplx(0);
  return out;
}

}  // namespace detail

// One Lawson-RK4 step. `forcing` is a physical-space [n, n] field (its mean is ignored).
inline Tensor<double> ns2d_step(const Tensor<double>& w, const FlowParams2D& p, const Tensor<double>* forcing = nullptr) {
  p.validate();
  require(w.shape() == Shape{p.n, p.n}, "ns2d_step: field ", to_string(w.shape()), " does not match n=", p.n);
  if (forcing) require(forcing->shape() == w.shape(), "ns2d_step: forcing shape mismatch");
  if (!w.all_finite()) throw StabilityError("ns2d_step: non-finite vorticity");
  check_cfl(w, p);

  auto& g = spectral_grid(p.n);
  const std::size_t n = p.n, nh = g.half(), m = g.spectral_size();
  std::vector<cplx> fh;
  if (forcing) fh = g.forward(forcing->data());
  const std::vector<cplx>* fp = forcing ? &fh : nullptr;

  std::vector<double> e(m), e2(m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < nh; ++j) {
      const std::size_t k = i * nh + j;
      const double lin = k == 0 ? 0.0 : -p.nu * g.k2(i, j) - p.drag;
      e[k] = std::exp(lin * p.dt);
      e2[k] = std::exp(lin * p.dt / 2);
    }
  const double dt = p.dt;
  const auto w0 = g.forward(w.data());
  const auto k1 = detail::nonlinear(g, w0, fp);
  std::vector<cplx> s(m);
  for (std::size_t k = 0; k < m; ++k) s[k] = e2[k] * (w0[k] + 0.5 * dt * k1[k]);
  const auto k2 = detail::nonlinear(g, s, fp);
  for (std::size_t k = 0; k < m; ++k) s[k] = e2[k] * w0[k] + 0.5 * dt * k2[k];
  const auto k3 = detail::nonlinear(g, s, fp);
  for (std::size_t k = 0; k < m; ++k) s[k] = e[k] * w0[k] + dt * e2[k] * k3[k];
  const auto k4 = detail::nonlinear(g, s, fp);
  for (std::size_t k = 0; k < m; ++k)
    s[k] = e[k] * w0[k] + dt / 6.0 * (e[k] * k1[k] + 2.0 * e2[k] * (k2[k] + k3[k]) + k4[k]);
  s[0] = w0[0];
  Tensor<double> out(w.shape());
  g.inverse(s, out.data());
  return out;
}

// Random real field whose spectrum is confined to kmin <= |k| <= kmax,
// zero mean, scaled to the requested RMS.
inline Tensor<double> band_limited_field(std::size_t n, double kmin, double kmax, double rms, std::uint64_t seed) {
  require(kmax >= kmin && kmin >= 0.0, "band_limited_field: invalid band [", kmin, ", ", kmax, "]");
  auto& g = spectral_grid(n);
  Rng rng(seed);
  Tensor<double> noise(Shape{n, n});
  for (auto& x : noise.storage()) x = rng.normal();
  auto hat = g.forward(noise.data());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < g.half(); ++j) {
      const double kk = std::sqrt(g.k2(i, j));
      if (kk < kmin || kk > kmax || g.nyquist(i, j)) hat[i * g.half() + j] = cplx(0);
    }
  hat[0] = cplx(0);
  Tensor<double> out(Shape{n, n});
  g.inverse(hat, out.data());
  double ss = 0.0;
  for (auto x : out.values()) ss += x * x;
  const double cur = std::sqrt(ss / static_cast<double>(out.size()));
  if (cur > 0.0)
    for (auto& x : out.storage()) x *= rms / cur;
  return out;
}

}  // namespace scotlift::synthetic
