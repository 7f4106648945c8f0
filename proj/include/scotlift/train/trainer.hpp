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

// Training regimes: 2D pretraining of the trunk, and fine-tuning of the
// lifted model from either a pretrained trunk ("mixed") or from scratch.
// Every random choice of step s (batch members, level window, masks) is
// drawn from a generator seeded by (seed, s), so a run resumed from a
// checkpoint continues exactly as the uninterrupted run would.

#include <cstring>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scotlift/data/archive.hpp"
#include "scotlift/model/lift.hpp"
#include "scotlift/train/checkpoint.hpp"
#include "scotlift/train/loss.hpp"

namespace scotlift::train {

enum class InitMode { Random, Mixed };

inline std::string to_string(InitMode m) { return m == InitMode::Mixed ? "mixed" : "random"; }

inline InitMode parse_init(const std::string& s) {
  if (s == "mixed") return InitMode::Mixed;
  if (s == "random") return InitMode::Random;
  throw ConfigError("init", "must be 'random' or 'mixed', got '" + s + "'");
}

struct TrainConfig {
  long steps = 2000;
  std::size_t batch = 4;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double sparsity = 0.0;
  InitMode init = InitMode::Mixed;
  long val_every = 100;
  std::size_t val_max_pairs = 0;  // 0 = every validation pair
  double weight_decay = 1e-5;
  std::vector<std::size_t> loss_channels{0, 1, 2};

  void validate() const {
    if (steps < 1) throw ConfigError("train.steps", "must be >= 1");
    if (batch < 1) throw ConfigError("train.batch", "must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr", "must be positive");
    data::check_ratio(sparsity);
    if (val_every < 1) throw ConfigError("train.val_every", "must be >= 1");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay", "must be non-negative");
    if (loss_channels.empty()) throw ConfigError("train.loss_channels", "must not be empty");
    for (auto c : loss_channels)
      if (c >= model::kChannels) throw ConfigError("train.loss_channels", "channel index out of range");
  }
};

struct LogRow {
  long step;
  std::string split;  // "train" or "val"
  double loss;
  double lr;
};

using LogSink = std::function<void(const LogRow&)>;

// Architecture plus parameters: forward dispatches on input rank.
struct Model {
  model::ScotConfig trunk;
  std::optional<model::LiftConfig> lift;
  ParamStore<float> params;

  std::string hash() const { return model::config_hash(trunk, lift ? &*lift : nullptr); }

  // x: [B, H, W, 4] for the trunk alone, [B, D, H, W, 4] for the lifted model.
  Var<float> forward(const Var<float>& x, std::span<const double> sigmas = {}) const {
    if (x.rank() == 4) return model::unet_forward(x, params, trunk);
    require(lift.has_value(), "Model::forward: 5D input needs the vertical lift");
    return model::lifted_forward(x, sigmas, params, trunk, *lift);
  }

  Tensor<float> predict(const Tensor<float>& x, std::span<const double> sigmas = {}) const {
    NoGradGuard guard;
    return forward(constant(x), sigmas).value();
  }
};

inline Model make_trunk_model(const model::ScotConfig& trunk, std::uint64_t seed) {
  trunk.validate();
  Model m{trunk, std::nullopt, {}};
  Rng rng(mix_seed(seed, 1));
  model::init_scot(m.params, trunk, rng);
  return m;
}

// Trunk from seed stream 1, lift from seed stream 2, so the lift weights do
// not depend on how the trunk was initialized.
inline Model make_lifted_model(const model::ScotConfig& trunk, const model::LiftConfig& lift, std::uint64_t seed) {
  Model m = make_trunk_model(trunk, seed);
  m.lift = lift;
  Rng rng(mix_seed(seed, 2));
  model::init_lift(m.params, trunk, lift, rng);
  return m;
}

struct Batch {
  Tensor<float> x, y;
  std::vector<double> sigmas;
  std::size_t level_start = 0;
};

// Pairs (t, t+1) drawn from `scaled`, levels [start, start+k). `mask_seeds`
// (one per sample) apply column sparsification to inputs; targets are dense
// with the input mask copied into their auxiliary slot. Without mask seeds
// the auxiliary slot is left as stored. 2D batches drop the level axis.
inline Batch make_batch(const data::Series& scaled, const std::vector<std::size_t>& times, std::size_t start,
                        std::size_t k, double sparsity, const std::vector<std::uint64_t>* mask_seeds, bool flat2d) {
  const std::size_t levels = scaled.levels(), h = scaled.n_lat(), w = scaled.n_lon();
  require(start + k <= levels, "make_batch: level window exceeds ", levels, " levels");
  if (flat2d) require(k == 1, "make_batch: 2D batches need exactly one level");
  const std::size_t b = times.size(), plane = h * w * model::kChannels, slab = k * plane;
  Shape shape = flat2d ? Shape{b, h, w, model::kChannels} : Shape{b, k, h, w, model::kChannels};
  Batch out{Tensor<float>(shape), Tensor<float>(shape), {}, start};
  out.sigmas.assign(scaled.sigmas.begin() + static_cast<std::ptrdiff_t>(start),
                    scaled.sigmas.begin() + static_cast<std::ptrdiff_t>(start + k));
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t t = times[i];
    require(t + 1 < scaled.times(), "make_batch: no successor for index ", t);
    const float* src_x = scaled.values.data() + (t * levels + start) * plane;
    const float* src_y = scaled.values.data() + ((t + 1) * levels + start) * plane;
    std::memcpy(out.x.data() + i * slab, src_x, slab * sizeof(float));
    std::memcpy(out.y.data() + i * slab, src_y, slab * sizeof(float));
    if (mask_seeds) {
      const auto mask = data::make_mask(h, w, sparsity, (*mask_seeds)[i]);
      Tensor<float> xs(Shape{k, h, w, model::kChannels});
      std::memcpy(xs.data(), out.x.data() + i * slab, slab * sizeof(float));
      data::apply_mask(xs, mask);
      std::memcpy(out.x.data() + i * slab, xs.data(), slab * sizeof(float));
      for (std::size_t d = 0; d < k; ++d)
        for (std::size_t q = 0; q < h * w; ++q)
          out.y[i * slab + d * plane + q * model::kChannels + model::kMaskChannel] = mask.mask_field[q];
    }
  }
  return out;
}

// Forward, loss, reverse pass and one AdamW update at learning rate `lr`.
inline double train_step(Model& m, AdamState& opt, const Batch& batch, double lr, long step,
                         const std::vector<std::size_t>& channels, double weight_decay = 1e-5) {
  m.params.zero_grad();
  auto pred = m.forward(constant(batch.x), batch.sigmas);
  auto loss = normalized_l1(pred, batch.y, channels);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) throw DivergenceError(step, "non-finite training loss");
  backward(loss);
  adamw_update(m.params, opt, lr, AdamWConfig{0.9, 0.999, 1e-8, weight_decay});
  m.params.zero_grad();
  return value;
}

// Mean batch loss over validation pairs at full depth, frozen parameters.
// Masks depend only on (seed, pair), so every evaluation sees the same inputs.
inline double validation_loss(const Model& m, const data::Series& scaled, const std::vector<std::size_t>& pairs,
                              std::size_t batch, double sparsity, std::uint64_t seed,
                              const std::vector<std::size_t>& channels, bool flat2d, bool masked) {
  require(!pairs.empty(), "validation split has no consecutive pairs");
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t i = 0; i < pairs.size(); i += batch) {
    std::vector<std::size_t> times(pairs.begin() + static_cast<std::ptrdiff_t>(i),
                                   pairs.begin() + static_cast<std::ptrdiff_t>(std::min(pairs.size(), i + batch)));
    std::vector<std::uint64_t> seeds;
    for (std::size_t j = 0; j < times.size(); ++j) seeds.push_back(mix_seed(seed ^ 0x5eed5eedULL, i + j));
    const auto b = make_batch(scaled, times, 0, scaled.levels(), sparsity, masked ? &seeds : nullptr, flat2d);
    const auto pred = m.predict(b.x, b.sigmas);
    total += normalized_l1_value(pred, b.y, channels);
    ++batches;
  }
  return total / static_cast<double>(batches);
}

inline std::vector<std::size_t> cap_pairs(std::vector<std::size_t> pairs, std::size_t cap) {
  if (cap > 0 && pairs.size() > cap) pairs.resize(cap);
  return pairs;
}

struct RunResult {
  Checkpoint checkpoint;
  data::ScalerStats scaler;
  std::vector<LogRow> log;
  std::vector<std::pair<long, double>> val_curve;

  double final_val() const { return val_curve.empty() ? NAN : val_curve.back().second; }
};

inline Checkpoint snapshot(const Model& m, const AdamState& opt, long step, const data::ScalerStats& scaler) {
  Checkpoint c;
  c.trunk = m.trunk;
  c.lift = m.lift;
  c.params = m.params.cast<float>();
  c.opt = opt;
  c.step = step;
  c.config_hash = m.hash();
  c.scaler_ref = scaler.source;
  c.scaler = scaler;
  return c;
}

namespace detail {

inline void emit(RunResult& r, const LogSink& sink, LogRow row) {
  if (sink) sink(row);
  r.log.push_back(std::move(row));
}

}  // namespace detail

// Trains the trunk on one-step prediction over a single-level corpus.
// `val` is optional; without it only training losses are logged.
inline RunResult run_pretrain(const data::Series& corpus, const data::Series* val, const model::ScotConfig& trunk,
                              const TrainConfig& cfg, const LogSink& sink = {}, const Checkpoint* resume = nullptr) {
  cfg.validate();
  corpus.validate();
  require(corpus.levels() == 1, "run_pretrain: expected a single-level corpus, got ", corpus.levels(), " levels");
  trunk.check_pixels(corpus.n_lat(), corpus.n_lon());
  const auto pairs = data::consecutive_pairs(corpus);
  require(!pairs.empty(), "run_pretrain: corpus has no consecutive pairs");

  RunResult r;
  r.scaler = data::fit_scaler(corpus.values, "pretrain-corpus");
  data::Series scaled = corpus;
  data::apply_scaler(scaled.values, r.scaler, data::Direction::Forward);
  std::optional<data::Series> val_scaled;
  std::vector<std::size_t> val_pairs;
  if (val) {
    val_scaled = *val;
    data::apply_scaler(val_scaled->values, r.scaler, data::Direction::Forward);
    val_pairs = cap_pairs(data::consecutive_pairs(*val_scaled), cfg.val_max_pairs);
  }

  Model m = make_trunk_model(trunk, cfg.seed);
  AdamState opt;
  long start = 0;
  if (resume) {
    check_resume(*resume, m.hash());
    m.params.assign_from(resume->params, "trunk.");
    opt = resume->opt;
    start = resume->step;
  }
  auto validate_now = [&](long step) {
    if (!val_scaled || val_pairs.empty()) return;
    const double v = validation_loss(m, *val_scaled, val_pairs, cfg.batch, 0.0, cfg.seed, cfg.loss_channels, true, false);
    r.val_curve.emplace_back(step, v);
    detail::emit(r, sink, {step, "val", v, cosine_lr(step, cfg.steps, cfg.lr)});
  };
  if (start == 0) validate_now(0);
  for (long s = start; s < cfg.steps; ++s) {
    Rng rng(mix_seed(cfg.seed, 0x1000000 + static_cast<std::uint64_t>(s)));
    std::vector<std::size_t> times;
    for (std::size_t i = 0; i < cfg.batch; ++i) times.push_back(pairs[rng.below(pairs.size())]);
    const auto batch = make_batch(scaled, times, 0, 1, 0.0, nullptr, true);
    const double lr = cosine_lr(s, cfg.steps, cfg.lr);
    const double loss = train_step(m, opt, batch, lr, s, cfg.loss_channels, cfg.weight_decay);
    detail::emit(r, sink, {s, "train", loss, lr});
    if ((s + 1) % cfg.val_every == 0 || s + 1 == cfg.steps) validate_now(s + 1);
  }
  r.checkpoint = snapshot(m, opt, cfg.steps, r.scaler);
  return r;
}

// Fine-tunes the lifted model. `pretrained` is required for mixed init and
// ignored for random init. Both inits draw identical lift weights.
inline RunResult run_finetune(const data::Series& train, const data::Series& val, const Checkpoint* pretrained,
                              const model::ScotConfig& trunk, const model::LiftConfig& lift, const TrainConfig& cfg,
                              const LogSink& sink = {}, const Checkpoint* resume = nullptr) {
  cfg.validate();
  train.validate();
  val.validate();
  lift.validate(trunk);
  trunk.check_pixels(train.n_lat(), train.n_lon());
  require(train.levels() == lift.levels_total, "run_finetune: archive has ", train.levels(),
          " levels but the lift expects ", lift.levels_total);
  require(train.sigmas == val.sigmas, "run_finetune: train and validation sigma lists differ");
  for (double s : train.sigmas) model::check_sigma(s);
  const auto pairs = data::consecutive_pairs(train);
  const auto val_pairs = cap_pairs(data::consecutive_pairs(val), cfg.val_max_pairs);
  require(!pairs.empty(), "run_finetune: training split has no consecutive pairs");

  RunResult r;
  r.scaler = data::fit_scaler(train.values, "finetune-train");
  data::Series tr = train, va = val;
  data::apply_scaler(tr.values, r.scaler, data::Direction::Forward);
  data::apply_scaler(va.values, r.scaler, data::Direction::Forward);

  Model m = make_lifted_model(trunk, lift, cfg.seed);
  if (cfg.init == InitMode::Mixed) {
    require(pretrained != nullptr, "run_finetune: mixed init needs a pretrained checkpoint");
    const auto want = model::config_hash(trunk);
    if (pretrained->config_hash != want)
      throw ConfigError("model", "pretrained trunk hash " + pretrained->config_hash + " does not match " + want);
    m.params.assign_from(pretrained->params, "trunk.");
  }
  AdamState opt;
  long start = 0;
  if (resume) {
    check_resume(*resume, m.hash());
    m.params.assign_from(resume->params, "");
    opt = resume->opt;
    start = resume->step;
  }

  auto validate_now = [&](long step) {
    const double v =
        validation_loss(m, va, val_pairs, cfg.batch, cfg.sparsity, cfg.seed, cfg.loss_channels, false, true);
    r.val_curve.emplace_back(step, v);
    detail::emit(r, sink, {step, "val", v, cosine_lr(step, cfg.steps, cfg.lr)});
  };
  if (start == 0) validate_now(0);
  for (long s = start; s < cfg.steps; ++s) {
    Rng rng(mix_seed(cfg.seed, 0x2000000 + static_cast<std::uint64_t>(s)));
    std::vector<std::size_t> times;
    for (std::size_t i = 0; i < cfg.batch; ++i) times.push_back(pairs[rng.below(pairs.size())]);
    const auto window = model::sample_adjacent_levels(lift.levels_total, lift.levels_sampled, rng.next());
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < cfg.batch; ++i) seeds.push_back(rng.next());
    const auto batch = make_batch(tr, times, window.start, lift.levels_sampled, cfg.sparsity, &seeds, false);
    const double lr = cosine_lr(s, cfg.steps, cfg.lr);
    const double loss = train_step(m, opt, batch, lr, s, cfg.loss_channels, cfg.weight_decay);
    detail::emit(r, sink, {s, "train", loss, lr});
    if ((s + 1) % cfg.val_every == 0 || s + 1 == cfg.steps) validate_now(s + 1);
  }
  r.checkpoint = snapshot(m, opt, cfg.steps, r.scaler);
  return r;
}

inline Model model_from_checkpoint(const Checkpoint& c) {
  Model m{c.trunk, c.lift, c.params.cast<float>()};
  return m;
}

}  // namespace scotlift::train
