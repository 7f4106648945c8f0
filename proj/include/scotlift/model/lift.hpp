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

// Vertical lift of the 2D trunk to [B, D, H, W, 4] columns.
//
// Every trunk layer runs on the level-folded batch [B*D, H, W, C] exactly as
// it was pretrained. After each stage's attention blocks the tokens are
// unfolded and a vertical block attends along D only, with (B, h, w) folded
// into the batch. Vertical position enters through an MLP of log(sigma), so
// any sigma in (0, 1] has an embedding, including levels never trained on.
// All lift tensors live under "lift." in the parameter store.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "scotlift/model/scot.hpp"

namespace scotlift::model {

// [B, D, ...] -> [B*D, ...]; the level index varies fastest within the folded batch.
inline Shape folded_shape(const Shape& s) {
  require(s.size() >= 2, "batch_fold: need at least [B, D], got ", to_string(s));
  Shape out(s.begin() + 1, s.end());
  out[0] = s[0] * s[1];
  return out;
}

inline Shape unfolded_shape(const Shape& s, std::size_t levels) {
  require(!s.empty() && levels > 0, "batch_unfold: empty shape or zero levels");
  require(s[0] % levels == 0, "batch_unfold: leading dim ", s[0], " not divisible by ", levels, " levels");
  Shape out{s[0] / levels, levels};
  out.insert(out.end(), s.begin() + 1, s.end());
  return out;
}

template <typename T>
Tensor<T> batch_fold(const Tensor<T>& x) {
  return x.reshaped(folded_shape(x.shape()));
}
template <typename T>
Tensor<T> batch_unfold(const Tensor<T>& x, std::size_t levels) {
  return x.reshaped(unfolded_shape(x.shape(), levels));
}
template <typename T>
Var<T> batch_fold(const Var<T>& x) {
  return ops::reshape(x, folded_shape(x.shape()));
}
template <typename T>
Var<T> batch_unfold(const Var<T>& x, std::size_t levels) {
  return ops::reshape(x, unfolded_shape(x.shape(), levels));
}

inline std::string lift_prefix(bool decoder, std::size_t stage) {
  return std::string(decoder ? "lift.dec" : "lift.enc") + std::to_string(stage);
}

template <typename T>
void init_vertical_block(ParamStore<T>& p, const std::string& prefix, std::size_t dim, std::size_t sigma_hidden,
                         std::size_t mlp_ratio, Rng& rng, double std, bool zero_out) {
  init_linear(p, prefix + ".sigma.fc1", 1, sigma_hidden, rng, 1.0);
  init_linear(p, prefix + ".sigma.fc2", sigma_hidden, dim, rng, std);
  init_linear(p, prefix + ".attn.qk", dim, 2 * dim, rng, std);
  init_linear(p, prefix + ".attn.v", dim, dim, rng, std);
  init_linear(p, prefix + ".attn.proj", dim, dim, rng, std, zero_out);
  init_norm(p, prefix + ".norm1", dim);
  init_linear(p, prefix + ".mlp.fc1", dim, mlp_ratio * dim, rng, std);
  init_linear(p, prefix + ".mlp.fc2", mlp_ratio * dim, dim, rng, std, zero_out);
  init_norm(p, prefix + ".norm2", dim);
}

// Adds one vertical block per encoder stage and per decoder stage.
template <typename T>
void init_lift(ParamStore<T>& p, const ScotConfig& trunk, const LiftConfig& lift, Rng& rng,
               double weight_std = 0.02) {
  lift.validate(trunk);
  for (std::size_t s = 0; s < trunk.stages; ++s)
    init_vertical_block(p, lift_prefix(false, s), trunk.stage_dim(s), lift.sigma_hidden, lift.mlp_ratio, rng,
                        weight_std, lift.zero_init_out);
  for (std::size_t s = trunk.stages - 1; s-- > 0;)
    init_vertical_block(p, lift_prefix(true, s), trunk.stage_dim(s), lift.sigma_hidden, lift.mlp_ratio, rng,
                        weight_std, lift.zero_init_out);
}

inline void check_sigma(double sigma) {
  require(std::isfinite(sigma) && sigma > 0.0 && sigma <= 1.0, "sigma must lie in (0, 1], got ", sigma);
}

// Two-layer GELU MLP of log(sigma): one row per level -> [D, dim].
template <typename T>
Var<T> sigma_embed(std::span<const double> sigmas, const ParamStore<T>& p, const std::string& prefix) {
  Tensor<T> in(Shape{sigmas.size(), 1});
  for (std::size_t d = 0; d < sigmas.size(); ++d) {
    check_sigma(sigmas[d]);
    in[d] = static_cast<T>(std::log(sigmas[d]));
  }
  auto h = ops::gelu(apply_linear(constant(std::move(in)), p, prefix + ".fc1"));
  return apply_linear(h, p, prefix + ".fc2");
}

// Self-attention along D for tokens [B, D, H, W, C]. Sigma embeddings are
// added to the query/key inputs only; H, W (and B) are folded into the batch,
// so no information moves between horizontal positions.
template <typename T>
Var<T> vertical_attention(const Var<T>& x, std::span<const double> sigmas, const ParamStore<T>& p,
                          const std::string& prefix, std::size_t heads) {
  require(x.rank() == 5, "vertical_attention: expected [B, D, H, W, C], got ", to_string(x.shape()));
  const std::size_t b = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3), c = x.dim(4);
  require(sigmas.size() == d, "vertical_attention: ", sigmas.size(), " sigmas for ", d, " levels");
  require(heads > 0 && c % heads == 0, "vertical_attention: width ", c, " not divisible by ", heads, " heads");
  const std::size_t cols = b * h * w, hd = c / heads;

  auto xc = ops::reshape(ops::permute(x, {0, 2, 3, 1, 4}), {cols, d, c});
  auto emb = ops::reshape(sigma_embed(sigmas, p, prefix + ".sigma"), {1, d, c});
  auto qk = apply_linear(ops::add_bcast(xc, emb), p, prefix + ".attn.qk");
  auto v = apply_linear(xc, p, prefix + ".attn.v");
  auto split_heads = [&](const Var<T>& t) {
    return ops::reshape(ops::permute(ops::reshape(t, {cols, d, heads, hd}), {0, 2, 1, 3}), {cols * heads, d, hd});
  };
  auto q = split_heads(ops::slice_last(qk, 0, c));
  auto k = split_heads(ops::slice_last(qk, c, 2 * c));
  auto logits = ops::scale(ops::bmm(q, k, false, true), static_cast<T>(1.0 / std::sqrt(double(hd))));
  auto out = ops::bmm(ops::softmax_last(logits), split_heads(v));
  out = ops::reshape(ops::permute(ops::reshape(out, {cols, heads, d, hd}), {0, 2, 1, 3}), {cols, d, c});
  out = apply_linear(out, p, prefix + ".attn.proj");

  auto y = ops::add(xc, apply_norm(out, p, prefix + ".norm1"));
  auto m = apply_linear(ops::gelu(apply_linear(y, p, prefix + ".mlp.fc1")), p, prefix + ".mlp.fc2");
  y = ops::add(y, apply_norm(m, p, prefix + ".norm2"));
  return ops::permute(ops::reshape(y, {b, h, w, d, c}), {0, 3, 1, 2, 4});
}

// [B, D, H, W, 4] -> [B, D, H, W, 4] one-step prediction of the lifted model.
template <typename T>
Var<T> lifted_forward(const Var<T>& x, std::span<const double> sigmas, const ParamStore<T>& p,
                      const ScotConfig& trunk, const LiftConfig& lift) {
  require(x.rank() == 5 && x.dim(4) == kChannels, "lifted_forward: expected [B, D, H, W, 4], got ",
          to_string(x.shape()));
  const std::size_t levels = x.dim(1);
  require(sigmas.size() == levels, "lifted_forward: ", sigmas.size(), " sigmas for ", levels, " levels");
  StageHook<T> hook = [&](const Var<T>& t, bool decoder, std::size_t s) {
    auto col = batch_unfold(t, levels);
    col = vertical_attention(col, sigmas, p, lift_prefix(decoder, s), lift.heads[s]);
    return batch_fold(col);
  };
  auto y = unet_forward(batch_fold(x), p, trunk, hook);
  return batch_unfold(y, levels);
}

struct LevelWindow {
  std::size_t start;
  std::vector<std::size_t> levels;
};

// Uniform start in {0, ..., D-k}; the window is the k contiguous levels from there.
inline LevelWindow sample_adjacent_levels(std::size_t total, std::size_t k, std::uint64_t seed) {
  require(k >= 1, "sample_adjacent_levels: k must be >= 1");
  require(k <= total, "sample_adjacent_levels: k=", k, " exceeds D=", total);
  Rng rng(seed);
  LevelWindow out{static_cast<std::size_t>(rng.below(total - k + 1)), {}};
  for (std::size_t i = 0; i < k; ++i) out.levels.push_back(out.start + i);
  return out;
}

}  // namespace scotlift::model
