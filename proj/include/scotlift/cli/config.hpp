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

// Run configuration: presets, JSON schema check, flag overrides.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "scotlift/data/archive.hpp"
#include "scotlift/synthetic/corpus.hpp"
#include "scotlift/train/trainer.hpp"

namespace scotlift::cli {

using Json = nlohmann::ordered_json;

struct DataConfig {
  std::size_t n = 32;
  double nu = 1e-3;
  double dt = 1e-2;
  double drag = 0.05;
  std::size_t steps_per_snapshot = 50;
  double forcing_rms = 0.3;
  std::size_t pretrain_trajectories = 24;
  std::size_t pretrain_val_trajectories = 2;
  std::size_t pretrain_snapshots = 16;
  std::size_t finetune_trajectories = 3;
  std::size_t finetune_val_trajectories = 3;
  std::size_t finetune_snapshots = 12;
  std::size_t levels = 6;
  double kappa = 0.1;
  std::vector<double> sigmas;         // empty: derived from `levels`
  std::optional<data::SplitSpec> split;  // empty: derived from trajectory counts
};

struct EvalConfig {
  std::size_t leads = 4;
  std::vector<double> sparsity_ratios{0.0, 0.8};
  std::size_t max_samples = 0;  // 0 = every validation initial state
};

struct PathConfig {
  std::string archive;             // fine-tuning archive; default <run>/data/finetune
  std::string pretrain_archive;    // default <run>/data/pretrain
  std::string pretrain_val_archive;
  std::string pretrained;          // trunk checkpoint; default <run>/checkpoints/pretrain.ckpt
};

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  DataConfig data;
  model::ScotConfig model;
  model::LiftConfig lift;
  train::TrainConfig pretrain;
  train::TrainConfig finetune;
  EvalConfig eval;
  PathConfig paths;
};

// Every k-th entry of the 18-level column, k = floor(18 / D).
inline std::vector<double> sigmas_for_levels(std::size_t levels) {
  const auto& all = data::multi_level_sigmas();
  if (levels == 0 || levels > all.size())
    throw ConfigError("data.levels", "must be between 1 and " + std::to_string(all.size()));
  if (levels == 1) return data::single_level_sigmas();
  const std::size_t stride = all.size() / levels;
  std::vector<double> s;
  for (std::size_t d = 0; d < levels; ++d) s.push_back(all[d * stride]);
  return s;
}

inline RunConfig desk_preset() {
  RunConfig c;
  c.preset = "desk";
  c.model.height = c.model.width = 32;
  c.model.window = 4;
  c.lift.levels_total = 6;
  c.lift.levels_sampled = 3;
  c.pretrain.steps = 2000;
  c.pretrain.batch = 8;
  c.pretrain.lr = 1e-3;
  c.pretrain.val_every = 500;
  c.finetune.steps = 2000;
  c.finetune.batch = 4;
  c.finetune.lr = 1e-3;
  c.finetune.val_every = 250;
  return c;
}

// Paper protocol: 128x128 inputs, Poseidon-B-shaped trunk, 18 levels sampled 9
// at a time, 20,000 steps at batch 10 and lr 1e-5, Mars Years 28-31 / 32 split.
inline RunConfig paper_preset() {
  RunConfig c;
  c.preset = "paper";
  c.data.n = 128;
  c.data.levels = 18;
  c.data.sigmas = data::multi_level_sigmas();
  c.data.split = data::paper_split();
  c.model.height = c.model.width = 128;
  c.model.patch = 4;
  c.model.embed_dim = 96;
  c.model.stages = 4;
  c.model.heads = {3, 6, 12, 24};
  c.model.window = 16;
  c.model.blocks_per_stage = 8;
  c.lift.heads = {3, 6, 12, 24};
  c.lift.levels_total = 18;
  c.lift.levels_sampled = 9;
  for (auto* t : {&c.pretrain, &c.finetune}) {
    t->steps = 20000;
    t->batch = 10;
    t->lr = 1e-5;
    t->val_every = 500;
  }
  return c;
}

inline RunConfig preset_by_name(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw ConfigError("preset", "must be 'desk' or 'paper', got '" + name + "'");
}

// ---------------------------------------------------------------------------
// JSON

inline Json to_json(const data::SplitSpec& s) {
  return {{"train_begin", s.train_begin}, {"train_end", s.train_end}, {"val_begin", s.val_begin},
          {"val_end", s.val_end},         {"closed", s.closed}};
}

inline Json to_json(const train::TrainConfig& t) {
  return {{"steps", t.steps},
          {"batch", t.batch},
          {"lr", t.lr},
          {"sparsity", t.sparsity},
          {"init", train::to_string(t.init)},
          {"val_every", t.val_every},
          {"val_max_pairs", t.val_max_pairs},
          {"weight_decay", t.weight_decay},
          {"loss_channels", t.loss_channels}};
}

inline Json to_json(const RunConfig& c) {
  Json j;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  const auto& d = c.data;
  j["data"] = {{"n", d.n},
               {"nu", d.nu},
               {"dt", d.dt},
               {"drag", d.drag},
               {"steps_per_snapshot", d.steps_per_snapshot},
               {"forcing_rms", d.forcing_rms},
               {"pretrain_trajectories", d.pretrain_trajectories},
               {"pretrain_val_trajectories", d.pretrain_val_trajectories},
               {"pretrain_snapshots", d.pretrain_snapshots},
               {"finetune_trajectories", d.finetune_trajectories},
               {"finetune_val_trajectories", d.finetune_val_trajectories},
               {"finetune_snapshots", d.finetune_snapshots},
               {"levels", d.levels},
               {"kappa", d.kappa},
               {"sigmas", d.sigmas}};
  if (d.split) j["data"]["split"] = to_json(*d.split);
  j["model"] = c.model;
  j["lift"] = c.lift;
  j["pretrain"] = to_json(c.pretrain);
  j["finetune"] = to_json(c.finetune);
  j["eval"] = {{"leads", c.eval.leads}, {"sparsity_ratios", c.eval.sparsity_ratios}, {"max_samples", c.eval.max_samples}};
  j["paths"] = {{"archive", c.paths.archive},
                {"pretrain_archive", c.paths.pretrain_archive},
                {"pretrain_val_archive", c.paths.pretrain_val_archive},
                {"pretrained", c.paths.pretrained}};
  return j;
}

namespace detail {

using model::detail::check_keys;
using model::detail::read_field;

inline void read_split(const Json& j, data::SplitSpec& s) {
  check_keys(j, {"train_begin", "train_end", "val_begin", "val_end", "closed"}, "data.split");
  read_field(j, "train_begin", s.train_begin, "data.split");
  read_field(j, "train_end", s.train_end, "data.split");
  read_field(j, "val_begin", s.val_begin, "data.split");
  read_field(j, "val_end", s.val_end, "data.split");
  read_field(j, "closed", s.closed, "data.split");
}

inline void read_train(const Json& j, train::TrainConfig& t, const std::string& sec) {
  check_keys(j, {"steps", "batch", "lr", "sparsity", "init", "val_every", "val_max_pairs", "weight_decay", "loss_channels"},
             sec);
  read_field(j, "steps", t.steps, sec);
  read_field(j, "batch", t.batch, sec);
  read_field(j, "lr", t.lr, sec);
  read_field(j, "sparsity", t.sparsity, sec);
  if (j.contains("init")) {
    std::string s;
    read_field(j, "init", s, sec);
    t.init = train::parse_init(s);
  }
  read_field(j, "val_every", t.val_every, sec);
  read_field(j, "val_max_pairs", t.val_max_pairs, sec);
  read_field(j, "weight_decay", t.weight_decay, sec);
  read_field(j, "loss_channels", t.loss_channels, sec);
}

}  // namespace detail

// Applies the values present in `j` on top of `c`; unknown keys are rejected.
inline void merge_json(RunConfig& c, const Json& j) {
  using detail::check_keys;
  using detail::read_field;
  check_keys(j, {"preset", "seed", "data", "model", "lift", "pretrain", "finetune", "eval", "paths"}, "config");
  read_field(j, "seed", c.seed, "config");
  if (j.contains("data")) {
    const auto& d = j["data"];
    auto& o = c.data;
    check_keys(d,
               {"n", "nu", "dt", "drag", "steps_per_snapshot", "forcing_rms", "pretrain_trajectories",
                "pretrain_val_trajectories", "pretrain_snapshots", "finetune_trajectories", "finetune_val_trajectories",
                "finetune_snapshots", "levels", "kappa", "sigmas", "split"},
               "data");
    read_field(d, "n", o.n, "data");
    read_field(d, "nu", o.nu, "data");
    read_field(d, "dt", o.dt, "data");
    read_field(d, "drag", o.drag, "data");
    read_field(d, "steps_per_snapshot", o.steps_per_snapshot, "data");
    read_field(d, "forcing_rms", o.forcing_rms, "data");
    read_field(d, "pretrain_trajectories", o.pretrain_trajectories, "data");
    read_field(d, "pretrain_val_trajectories", o.pretrain_val_trajectories, "data");
    read_field(d, "pretrain_snapshots", o.pretrain_snapshots, "data");
    read_field(d, "finetune_trajectories", o.finetune_trajectories, "data");
    read_field(d, "finetune_val_trajectories", o.finetune_val_trajectories, "data");
    read_field(d, "finetune_snapshots", o.finetune_snapshots, "data");
    read_field(d, "levels", o.levels, "data");
    read_field(d, "kappa", o.kappa, "data");
    read_field(d, "sigmas", o.sigmas, "data");
    if (d.contains("split")) {
      data::SplitSpec s = o.split.value_or(data::SplitSpec{});
      detail::read_split(d["split"], s);
      o.split = s;
    }
  }
  if (j.contains("model")) {
    // Start from the current values so partial sections only override what they name.
    Json merged = c.model;
    model::detail::check_keys(j["model"], {"height", "width", "patch", "embed_dim", "stages", "heads", "window",
                                           "mlp_ratio", "blocks_per_stage", "convnext_kernel"},
                              "model");
    merged.update(j["model"]);
    from_json(merged, c.model);
  }
  if (j.contains("lift")) {
    Json merged = c.lift;
    model::detail::check_keys(j["lift"],
                              {"heads", "sigma_hidden", "mlp_ratio", "levels_total", "levels_sampled", "zero_init_out"},
                              "lift");
    merged.update(j["lift"]);
    from_json(merged, c.lift);
  }
  if (j.contains("pretrain")) detail::read_train(j["pretrain"], c.pretrain, "pretrain");
  if (j.contains("finetune")) detail::read_train(j["finetune"], c.finetune, "finetune");
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    check_keys(e, {"leads", "sparsity_ratios", "max_samples"}, "eval");
    read_field(e, "leads", c.eval.leads, "eval");
    read_field(e, "sparsity_ratios", c.eval.sparsity_ratios, "eval");
    read_field(e, "max_samples", c.eval.max_samples, "eval");
  }
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    check_keys(p, {"archive", "pretrain_archive", "pretrain_val_archive", "pretrained"}, "paths");
    read_field(p, "archive", c.paths.archive, "paths");
    read_field(p, "pretrain_archive", c.paths.pretrain_archive, "paths");
    read_field(p, "pretrain_val_archive", c.paths.pretrain_val_archive, "paths");
    read_field(p, "pretrained", c.paths.pretrained, "paths");
  }
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<long> steps;
  std::optional<double> sparsity;
  std::optional<std::string> init;
  std::optional<std::size_t> levels;
};

inline void apply_overrides(RunConfig& c, const Overrides& o) {
  if (o.seed) c.seed = *o.seed;
  if (o.steps) c.pretrain.steps = c.finetune.steps = *o.steps;
  if (o.sparsity) {
    data::check_ratio(*o.sparsity);
    c.finetune.sparsity = *o.sparsity;
  }
  if (o.init) c.finetune.init = train::parse_init(*o.init);
  if (o.levels) {
    c.data.levels = *o.levels;
    c.data.sigmas.clear();
  }
}

// Fills derived fields and validates every section.
inline void resolve(RunConfig& c) {
  c.pretrain.seed = c.finetune.seed = c.seed;
  auto& d = c.data;
  if (d.sigmas.empty()) d.sigmas = sigmas_for_levels(d.levels);
  if (d.sigmas.size() != d.levels)
    throw ConfigError("data.sigmas", std::to_string(d.sigmas.size()) + " sigmas for " + std::to_string(d.levels) +
                                         " levels");
  data::SigmaGrid{d.sigmas, d.n, d.n}.validate();
  c.lift.levels_total = d.levels;
  if (c.lift.levels_sampled > d.levels)
    throw ConfigError("lift.levels_sampled", "k = " + std::to_string(c.lift.levels_sampled) + " exceeds " +
                                                 std::to_string(d.levels) + " levels");
  if (d.n < 8) throw ConfigError("data.n", "must be >= 8");
  if (d.steps_per_snapshot == 0) throw ConfigError("data.steps_per_snapshot", "must be >= 1");
  if (d.pretrain_trajectories == 0) throw ConfigError("data.pretrain_trajectories", "must be >= 1");
  if (d.finetune_trajectories == 0) throw ConfigError("data.finetune_trajectories", "must be >= 1");
  if (d.finetune_val_trajectories == 0) throw ConfigError("data.finetune_val_trajectories", "must be >= 1");
  if (d.pretrain_snapshots < 2) throw ConfigError("data.pretrain_snapshots", "must be >= 2");
  if (d.finetune_snapshots < 2) throw ConfigError("data.finetune_snapshots", "must be >= 2");
  if (!(d.nu >= 0.0)) throw ConfigError("data.nu", "must be non-negative");
  if (!(d.dt > 0.0)) throw ConfigError("data.dt", "must be positive");
  if (!(d.kappa >= 0.0)) throw ConfigError("data.kappa", "must be non-negative");
  if (!(d.kappa * d.dt < 0.5)) throw ConfigError("data.kappa", "kappa*dt must be below 0.5");
  if (!d.split) {
    // Trajectory t occupies sols [t (S+1), t (S+1) + S - 1] * step.
    const double step = d.dt * static_cast<double>(d.steps_per_snapshot);
    const double boundary = static_cast<double>(d.finetune_trajectories * (d.finetune_snapshots + 1)) * step;
    const double end =
        static_cast<double>((d.finetune_trajectories + d.finetune_val_trajectories) * (d.finetune_snapshots + 1)) * step;
    d.split = data::SplitSpec{0.0, boundary, boundary, end, false};
  }
  try {
    d.split->validate();
  } catch (const ContractError& e) {
    throw ConfigError("data.split", e.what());
  }
  c.model.validate();
  c.model.check_pixels(d.n, d.n);
  c.lift.validate(c.model);
  c.pretrain.validate();
  c.finetune.validate();
  if (c.eval.sparsity_ratios.empty()) throw ConfigError("eval.sparsity_ratios", "must not be empty");
  for (double r : c.eval.sparsity_ratios) {
    try {
      data::check_ratio(r);
    } catch (const ConfigError&) {
      std::ostringstream msg;
      msg << "ratio " << r << " outside [0, 1]";
      throw ConfigError("eval.sparsity_ratios", msg.str());
    }
  }
}

inline synthetic::CorpusParams corpus_params(const DataConfig& d) {
  synthetic::CorpusParams p;
  p.flow.n = d.n;
  p.flow.nu = d.nu;
  p.flow.dt = d.dt;
  p.flow.drag = d.drag;
  p.steps_per_snapshot = d.steps_per_snapshot;
  p.forcing_rms = d.forcing_rms;
  return p;
}

inline synthetic::StackParams3D stack_params(const DataConfig& d) {
  synthetic::StackParams3D s;
  s.flow = corpus_params(d).flow;
  s.levels = d.levels;
  s.kappa = d.kappa;
  s.sigmas = d.sigmas;
  return s;
}

}  // namespace scotlift::cli
