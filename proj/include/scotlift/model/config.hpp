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

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <initializer_list>
#include <string>
#include <vector>

#include "json.hpp"
#include "scotlift/core/errors.hpp"
#include "scotlift/core/rng.hpp"

namespace scotlift::model {

// Channel slots of every model-space field: T (or a scalar tracer), u, v,
// and the auxiliary slot that holds zeros or the presence mask.
inline constexpr std::size_t kChannels = 4;
inline constexpr std::size_t kPhysicalChannels = 3;
inline constexpr std::size_t kMaskChannel = 3;

struct ScotConfig {
  std::size_t height = 64;  // pixels
  std::size_t width = 64;
  std::size_t patch = 4;
  std::size_t embed_dim = 32;
  std::size_t stages = 2;
  std::vector<std::size_t> heads = {4, 8};
  std::size_t window = 8;  // tokens
  std::size_t mlp_ratio = 4;
  std::size_t blocks_per_stage = 2;
  std::size_t convnext_kernel = 7;

  std::size_t stage_dim(std::size_t s) const { return embed_dim << s; }
  std::size_t tokens_h(std::size_t s) const { return (height / patch) >> s; }
  std::size_t tokens_w(std::size_t s) const { return (width / patch) >> s; }
  std::size_t required_multiple() const { return patch << (stages - 1); }

  struct Window {
    std::size_t h, w;          // window extent in tokens
    std::size_t shift_h, shift_w;  // cyclic shift used by odd blocks
    bool full_grid;
  };

  // The configured window when it tiles the stage's token grid, otherwise a
  // single window spanning the whole grid (no shift in that case).
  Window stage_window(std::size_t s) const {
    const std::size_t th = tokens_h(s), tw = tokens_w(s);
    if (window < th && window < tw && th % window == 0 && tw % window == 0)
      return {window, window, window / 2, window / 2, false};
    return {th, tw, 0, 0, true};
  }

  void validate() const {
    if (patch == 0) throw ConfigError("model.patch", "must be >= 1");
    if (stages == 0) throw ConfigError("model.stages", "must be >= 1");
    if (embed_dim == 0) throw ConfigError("model.embed_dim", "must be >= 1");
    if (heads.size() != stages)
      throw ConfigError("model.heads", "needs one entry per stage (" + std::to_string(stages) + ")");
    for (std::size_t s = 0; s < stages; ++s)
      if (heads[s] == 0 || stage_dim(s) % heads[s] != 0)
        throw ConfigError("model.heads", "stage " + std::to_string(s) + " width " + std::to_string(stage_dim(s)) +
                                             " not divisible by " + std::to_string(heads[s]) + " heads");
    if (window == 0) throw ConfigError("model.window", "must be >= 1");
    if (mlp_ratio == 0) throw ConfigError("model.mlp_ratio", "must be >= 1");
    if (blocks_per_stage == 0) throw ConfigError("model.blocks_per_stage", "must be >= 1");
    if (convnext_kernel % 2 == 0) throw ConfigError("model.convnext_kernel", "must be odd");
    check_pixels(height, width);
  }

  // Input pixel counts must be divisible by patch * 2^(stages-1).
  void check_pixels(std::size_t h, std::size_t w) const {
    const std::size_t m = required_multiple();
    if (h == 0 || w == 0 || h % m != 0 || w % m != 0)
      throw ConfigError("model.pixels", "input " + std::to_string(h) + "x" + std::to_string(w) +
                                            " must be a multiple of " + std::to_string(m) + " (patch " +
                                            std::to_string(patch) + " x 2^" + std::to_string(stages - 1) + ")");
  }
};

struct LiftConfig {
  std::vector<std::size_t> heads = {4, 8};  // vertical heads per stage
  std::size_t sigma_hidden = 32;
  std::size_t mlp_ratio = 2;
  std::size_t levels_total = 6;
  std::size_t levels_sampled = 3;
  // Diagnostic mode: zero the vertical blocks' output projections so the
  // lifted model reproduces the 2D trunk level by level.
  bool zero_init_out = false;

  void validate(const ScotConfig& trunk) const {
    if (heads.size() != trunk.stages)
      throw ConfigError("lift.heads", "needs one entry per stage (" + std::to_string(trunk.stages) + ")");
    for (std::size_t s = 0; s < trunk.stages; ++s)
      if (heads[s] == 0 || trunk.stage_dim(s) % heads[s] != 0)
        throw ConfigError("lift.heads", "stage " + std::to_string(s) + " width not divisible by head count");
    if (sigma_hidden == 0) throw ConfigError("lift.sigma_hidden", "must be >= 1");
    if (mlp_ratio == 0) throw ConfigError("lift.mlp_ratio", "must be >= 1");
    if (levels_total == 0) throw ConfigError("lift.levels_total", "must be >= 1");
    if (levels_sampled == 0 || levels_sampled > levels_total)
      throw ConfigError("lift.levels_sampled", "must satisfy 1 <= k <= levels_total");
  }
};

inline void to_json(nlohmann::ordered_json& j, const ScotConfig& c) {
  j = nlohmann::ordered_json{{"height", c.height},       {"width", c.width},         {"patch", c.patch},
                             {"embed_dim", c.embed_dim}, {"stages", c.stages},       {"heads", c.heads},
                             {"window", c.window},       {"mlp_ratio", c.mlp_ratio}, {"blocks_per_stage", c.blocks_per_stage},
                             {"convnext_kernel", c.convnext_kernel}};
}

inline void to_json(nlohmann::ordered_json& j, const LiftConfig& c) {
  j = nlohmann::ordered_json{{"heads", c.heads},
                             {"sigma_hidden", c.sigma_hidden},
                             {"mlp_ratio", c.mlp_ratio},
                             {"levels_total", c.levels_total},
                             {"levels_sampled", c.levels_sampled},
                             {"zero_init_out", c.zero_init_out}};
}

namespace detail {

// Rejects keys of `j` outside `allowed`, naming them as "<section>.<key>".
template <typename Json>
void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section, "must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(section + "." + key, "unknown key");
  }
}

template <typename V, typename Json>
void read_field(const Json& j, const char* key, V& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).template get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(section + "." + key, "has the wrong type");
  }
}

}  // namespace detail

inline void from_json(const nlohmann::ordered_json& j, ScotConfig& c) {
  detail::check_keys(j, {"height", "width", "patch", "embed_dim", "stages", "heads", "window", "mlp_ratio",
                         "blocks_per_stage", "convnext_kernel"},
                     "model");
  detail::read_field(j, "height", c.height, "model");
  detail::read_field(j, "width", c.width, "model");
  detail::read_field(j, "patch", c.patch, "model");
  detail::read_field(j, "embed_dim", c.embed_dim, "model");
  detail::read_field(j, "stages", c.stages, "model");
  detail::read_field(j, "heads", c.heads, "model");
  detail::read_field(j, "window", c.window, "model");
  detail::read_field(j, "mlp_ratio", c.mlp_ratio, "model");
  detail::read_field(j, "blocks_per_stage", c.blocks_per_stage, "model");
  detail::read_field(j, "convnext_kernel", c.convnext_kernel, "model");
}

inline void from_json(const nlohmann::ordered_json& j, LiftConfig& c) {
  detail::check_keys(j, {"heads", "sigma_hidden", "mlp_ratio", "levels_total", "levels_sampled", "zero_init_out"},
                     "lift");
  detail::read_field(j, "heads", c.heads, "lift");
  detail::read_field(j, "sigma_hidden", c.sigma_hidden, "lift");
  detail::read_field(j, "mlp_ratio", c.mlp_ratio, "lift");
  detail::read_field(j, "levels_total", c.levels_total, "lift");
  detail::read_field(j, "levels_sampled", c.levels_sampled, "lift");
  detail::read_field(j, "zero_init_out", c.zero_init_out, "lift");
}

// Architecture fingerprint stored in checkpoints; resuming requires a match.
inline std::string config_hash(const ScotConfig& trunk, const LiftConfig* lift = nullptr) {
  nlohmann::ordered_json j;
  j["model"] = trunk;
  // Level counts are data-side; the lift weights do not depend on them.
  if (lift) j["lift"] = {{"heads", lift->heads}, {"sigma_hidden", lift->sigma_hidden}, {"mlp_ratio", lift->mlp_ratio}};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

}  // namespace scotlift::model
