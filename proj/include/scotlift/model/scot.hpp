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

// The 2D trunk: a windowed-attention U-Net operating on [N, H, W, 4] fields.
//
//   patch_embed -> encoder stages (swin blocks, patch merging)
//               -> decoder stages (patch expanding, ConvNeXt-filtered skip,
//                  fuse projection, swin blocks)
//               -> recovery head back to [N, H, W, 4]
//
// Attention blocks use scaled cosine attention with a clamped per-head
// temperature, a learned relative-position bias table and residual
// post-normalization: x <- x + LN(attn(x)); x <- x + LN(mlp(x)).

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "scotlift/core/ops.hpp"
#include "scotlift/core/params.hpp"
#include "scotlift/model/config.hpp"

namespace scotlift::model {

using Index = std::shared_ptr<const std::vector<std::size_t>>;

namespace detail {

struct PartitionIndex {
  Index forward;  // window-major layout gathered from the (shifted) grid
  Index inverse;  // back to grid layout
};

// Gather maps for cyclic shift + window partition of [N, H, W, C], cached per geometry.
inline PartitionIndex partition_index(std::size_t n, std::size_t h, std::size_t w, std::size_t c, std::size_t wh,
                                      std::size_t ww, std::size_t sh, std::size_t sw) {
  using Key = std::array<std::size_t, 8>;
  static std::mutex mu;
  static std::map<Key, PartitionIndex> cache;
  const Key key{n, h, w, c, wh, ww, sh, sw};
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  auto fwd = std::make_shared<std::vector<std::size_t>>(n * h * w * c);
  auto inv = std::make_shared<std::vector<std::size_t>>(n * h * w * c);
  const std::size_t nh = h / wh, nw = w / ww;
  std::size_t k = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t a = 0; a < nh; ++a)
      for (std::size_t e = 0; e < nw; ++e)
        for (std::size_t i = 0; i < wh; ++i)
          for (std::size_t j = 0; j < ww; ++j) {
            const std::size_t row = (a * wh + i + sh) % h;
            const std::size_t col = (e * ww + j + sw) % w;
            const std::size_t src = ((b * h + row) * w + col) * c;
            for (std::size_t ch = 0; ch < c; ++ch, ++k) {
              (*fwd)[k] = src + ch;
              (*inv)[src + ch] = k;
            }
          }
  PartitionIndex out{fwd, inv};
  std::lock_guard lock(mu);
  cache.emplace(key, out);
  return out;
}

// Flat indices into a [(2wh-1)(2ww-1), heads] table producing [heads, L, L].
inline Index relative_bias_index(std::size_t wh, std::size_t ww, std::size_t heads) {
  const std::size_t l = wh * ww;
  auto idx = std::make_shared<std::vector<std::size_t>>(heads * l * l);
  for (std::size_t hd = 0; hd < heads; ++hd)
    for (std::size_t p = 0; p < l; ++p)
      for (std::size_t q = 0; q < l; ++q) {
        const std::size_t di = p / ww + wh - 1 - q / ww;
        const std::size_t dj = p % ww + ww - 1 - q % ww;
        (*idx)[(hd * l + p) * l + q] = (di * (2 * ww - 1) + dj) * heads + hd;
      }
  return idx;
}

// Additive mask [nW, L, L] blocking attention between tokens that the cyclic
// shift brought together from different image regions.
template <typename T>
Tensor<T> shift_mask(std::size_t h, std::size_t w, std::size_t wh, std::size_t ww, std::size_t sh, std::size_t sw) {
  std::vector<int> label(h * w);
  auto region = [](std::size_t i, std::size_t n, std::size_t win, std::size_t shift) {
    if (i < n - win) return 0;
    if (i < n - shift) return 1;
    return 2;
  };
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) label[i * w + j] = region(i, h, wh, sh) * 3 + region(j, w, ww, sw);
  const std::size_t nh = h / wh, nw = w / ww, l = wh * ww;
  Tensor<T> mask(Shape{nh * nw, l, l});
  for (std::size_t a = 0; a < nh; ++a)
    for (std::size_t e = 0; e < nw; ++e)
      for (std::size_t p = 0; p < l; ++p)
        for (std::size_t q = 0; q < l; ++q) {
          const int lp = label[(a * wh + p / ww) * w + e * ww + p % ww];
          const int lq = label[(a * wh + q / ww) * w + e * ww + q % ww];
          mask.at(a * nw + e, p, q) = lp == lq ? T(0) : T(-100);
        }
  return mask;
}

template <typename T>
std::shared_ptr<const Tensor<T>> cached_shift_mask(std::size_t h, std::size_t w, std::size_t wh, std::size_t ww,
                                                   std::size_t sh, std::size_t sw) {
  using Key = std::array<std::size_t, 6>;
  static std::mutex mu;
  static std::map<Key, std::shared_ptr<const Tensor<T>>> cache;
  const Key key{h, w, wh, ww, sh, sw};
  std::lock_guard lock(mu);
  auto& slot = cache[key];
  if (!slot) slot = std::make_shared<const Tensor<T>>(shift_mask<T>(h, w, wh, ww, sh, sw));
  return slot;
}

// Relative-bias gather maps, cached per window geometry.
inline Index cached_relative_bias_index(std::size_t wh, std::size_t ww, std::size_t heads) {
  using Key = std::array<std::size_t, 3>;
  static std::mutex mu;
  static std::map<Key, Index> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[Key{wh, ww, heads}];
  if (!slot) slot = relative_bias_index(wh, ww, heads);
  return slot;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Parameter initialization

struct InitOptions {
  double weight_std = 0.02;
  // Zero the final projection of every residual branch (attention, MLP,
  // ConvNeXt). Used by structural tests.
  bool zero_residual_branches = false;
};

template <typename T>
void init_linear(ParamStore<T>& p, const std::string& name, std::size_t in, std::size_t out, Rng& rng, double std,
                 bool zero = false) {
  p.add(name + ".w", zero ? Tensor<T>(Shape{in, out}) : init::trunc_normal<T>(Shape{in, out}, std, rng));
  p.add(name + ".b", Tensor<T>(Shape{out}));
}

template <typename T>
void init_norm(ParamStore<T>& p, const std::string& name, std::size_t dim) {
  p.add(name + ".g", Tensor<T>(Shape{dim}, T(1)));
  p.add(name + ".b", Tensor<T>(Shape{dim}));
}

template <typename T>
Var<T> apply_linear(const Var<T>& x, const ParamStore<T>& p, const std::string& name) {
  return ops::linear(x, p.get(name + ".w"), p.get(name + ".b"));
}

template <typename T>
Var<T> apply_norm(const Var<T>& x, const ParamStore<T>& p, const std::string& name) {
  return ops::layer_norm(x, p.get(name + ".g"), p.get(name + ".b"));
}

template <typename T>
void init_swin_block(ParamStore<T>& p, const std::string& prefix, std::size_t dim, std::size_t heads,
                     const ScotConfig::Window& win, std::size_t mlp_ratio, Rng& rng, const InitOptions& opt) {
  init_linear(p, prefix + ".attn.qkv", dim, 3 * dim, rng, opt.weight_std);
  init_linear(p, prefix + ".attn.proj", dim, dim, rng, opt.weight_std, opt.zero_residual_branches);
  p.add(prefix + ".attn.logit_scale", Tensor<T>(Shape{heads}, static_cast<T>(std::log(10.0))));
  p.add(prefix + ".attn.rpb",
        init::trunc_normal<T>(Shape{(2 * win.h - 1) * (2 * win.w - 1), heads}, opt.weight_std, rng));
  init_norm(p, prefix + ".norm1", dim);
  init_linear(p, prefix + ".mlp.fc1", dim, mlp_ratio * dim, rng, opt.weight_std);
  init_linear(p, prefix + ".mlp.fc2", mlp_ratio * dim, dim, rng, opt.weight_std, opt.zero_residual_branches);
  init_norm(p, prefix + ".norm2", dim);
}

template <typename T>
void init_convnext(ParamStore<T>& p, const std::string& prefix, std::size_t dim, std::size_t kernel, Rng& rng,
                   const InitOptions& opt) {
  p.add(prefix + ".dw.w", init::trunc_normal<T>(Shape{kernel, kernel, dim}, opt.weight_std, rng));
  p.add(prefix + ".dw.b", Tensor<T>(Shape{dim}));
  init_norm(p, prefix + ".norm", dim);
  init_linear(p, prefix + ".pw1", dim, 4 * dim, rng, opt.weight_std);
  init_linear(p, prefix + ".pw2", 4 * dim, dim, rng, opt.weight_std, opt.zero_residual_branches);
}

// Adds every trunk tensor under "trunk." to `p`.
template <typename T>
void init_scot(ParamStore<T>& p, const ScotConfig& cfg, Rng& rng, const InitOptions& opt = {}) {
  cfg.validate();
  const std::size_t in = cfg.patch * cfg.patch * kChannels;
  init_linear(p, "trunk.embed", in, cfg.embed_dim, rng, opt.weight_std);
  init_norm(p, "trunk.embed.norm", cfg.embed_dim);
  for (std::size_t s = 0; s < cfg.stages; ++s) {
    const auto win = cfg.stage_window(s);
    for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b)
      init_swin_block(p, "trunk.enc" + std::to_string(s) + ".blk" + std::to_string(b), cfg.stage_dim(s),
                      cfg.heads[s], win, cfg.mlp_ratio, rng, opt);
    if (s + 1 < cfg.stages) {
      const std::string down = "trunk.down" + std::to_string(s);
      init_linear(p, down, 4 * cfg.stage_dim(s), cfg.stage_dim(s + 1), rng, opt.weight_std);
      init_norm(p, down + ".norm", cfg.stage_dim(s + 1));
    }
  }
  for (std::size_t s = cfg.stages - 1; s-- > 0;) {
    const std::string tag = std::to_string(s);
    const std::size_t dim = cfg.stage_dim(s);
    init_linear(p, "trunk.up" + tag, cfg.stage_dim(s + 1), 4 * dim, rng, opt.weight_std);
    init_norm(p, "trunk.up" + tag + ".norm", dim);
    init_convnext(p, "trunk.skip" + tag, dim, cfg.convnext_kernel, rng, opt);
    init_linear(p, "trunk.fuse" + tag, 2 * dim, dim, rng, opt.weight_std);
    for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b)
      init_swin_block(p, "trunk.dec" + tag + ".blk" + std::to_string(b), dim, cfg.heads[s], cfg.stage_window(s),
                      cfg.mlp_ratio, rng, opt);
  }
  init_linear(p, "trunk.head", cfg.embed_dim, in, rng, opt.weight_std);
}

// ---------------------------------------------------------------------------
// Forward building blocks

// [N, H, W, 4] -> [N, H/p, W/p, embed_dim]: non-overlapping p x p patches,
// linear projection, layer norm.
template <typename T>
Var<T> patch_embed(const Var<T>& x, const ParamStore<T>& p, const ScotConfig& cfg) {
  require(x.rank() == 4 && x.dim(3) == kChannels, "patch_embed: expected [N, H, W, 4], got ", to_string(x.shape()));
  cfg.check_pixels(x.dim(1), x.dim(2));
  const std::size_t n = x.dim(0), ps = cfg.patch, h = x.dim(1) / ps, w = x.dim(2) / ps;
  auto patches = ops::reshape(x, {n, h, ps, w, ps, kChannels});
  patches = ops::permute(patches, {0, 1, 3, 2, 4, 5});
  patches = ops::reshape(patches, {n, h, w, ps * ps * kChannels});
  return apply_norm(apply_linear(patches, p, "trunk.embed"), p, "trunk.embed.norm");
}

// Attention sub-layer of a swin block: shift, partition, scaled cosine
// attention with relative-position bias (and shift mask), output projection,
// reverse partition and shift. No residual, no norm.
template <typename T>
Var<T> window_attention_mix(const Var<T>& x, const ParamStore<T>& p, const std::string& prefix, std::size_t heads,
                            const ScotConfig::Window& win, bool shifted) {
  require(x.rank() == 4, "window_attention: expected [N, H, W, C], got ", to_string(x.shape()));
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (win.h == 0 || win.w == 0 || h % win.h != 0 || w % win.w != 0)
    throw ConfigError("model.window", "window " + std::to_string(win.h) + "x" + std::to_string(win.w) +
                                          " does not partition a " + std::to_string(h) + "x" + std::to_string(w) +
                                          " token grid");
  require(c % heads == 0, "window_attention: width ", c, " not divisible by ", heads, " heads");
  const bool single = win.h == h && win.w == w;
  const std::size_t sh = shifted && !single ? win.shift_h : 0;
  const std::size_t sw = shifted && !single ? win.shift_w : 0;
  const std::size_t nwin = (h / win.h) * (w / win.w);
  const std::size_t l = win.h * win.w, bw = n * nwin, hd = c / heads;

  const auto part = detail::partition_index(n, h, w, c, win.h, win.w, sh, sw);
  auto xw = ops::gather(x, part.forward, {bw, l, c});
  auto qkv = apply_linear(xw, p, prefix + ".qkv");
  auto split_heads = [&](const Var<T>& t) {
    auto r = ops::reshape(t, {bw, l, heads, hd});
    r = ops::permute(r, {0, 2, 1, 3});
    return ops::reshape(r, {bw * heads, l, hd});
  };
  auto q = ops::l2_normalize_last(split_heads(ops::slice_last(qkv, 0, c)));
  auto k = ops::l2_normalize_last(split_heads(ops::slice_last(qkv, c, 2 * c)));
  auto v = split_heads(ops::slice_last(qkv, 2 * c, 3 * c));

  auto logits = ops::reshape(ops::bmm(q, k, false, true), {bw, heads, l, l});
  auto temperature = ops::exp(ops::clamp_max(p.get(prefix + ".logit_scale"), static_cast<T>(std::log(1.0 / 0.01))));
  auto bias = ops::gather(p.get(prefix + ".rpb"), detail::cached_relative_bias_index(win.h, win.w, heads), {heads, l, l});
  std::shared_ptr<const Tensor<T>> mask;
  if (sh || sw) mask = detail::cached_shift_mask<T>(h, w, win.h, win.w, sh, sw);
  auto attn = ops::scaled_biased_softmax(logits, temperature, bias, mask);
  auto out = ops::bmm(ops::reshape(attn, {bw * heads, l, l}), v);
  out = ops::reshape(ops::permute(ops::reshape(out, {bw, heads, l, hd}), {0, 2, 1, 3}), {bw, l, c});
  out = apply_linear(out, p, prefix + ".proj");
  return ops::gather(out, part.inverse, {n, h, w, c});
}

// Full swin block on [N, H, W, C] tokens; `shifted` selects the half-window
// cyclic shift (ignored when the window covers the whole grid).
template <typename T>
Var<T> window_attention(const Var<T>& x, const ParamStore<T>& p, const std::string& prefix, std::size_t heads,
                        const ScotConfig::Window& win, bool shifted) {
  auto y = ops::add(x, apply_norm(window_attention_mix(x, p, prefix + ".attn", heads, win, shifted), p,
                                  prefix + ".norm1"));
  auto m = apply_linear(ops::gelu(apply_linear(y, p, prefix + ".mlp.fc1")), p, prefix + ".mlp.fc2");
  return ops::add(y, apply_norm(m, p, prefix + ".norm2"));
}

// Depthwise k x k conv (zero padding) -> LN -> expand x4 -> GELU -> contract -> residual.
template <typename T>
Var<T> convnext_block(const Var<T>& x, const ParamStore<T>& p, const std::string& prefix) {
  auto y = ops::depthwise_conv2d(x, p.get(prefix + ".dw.w"), p.get(prefix + ".dw.b"));
  y = apply_norm(y, p, prefix + ".norm");
  y = apply_linear(ops::gelu(apply_linear(y, p, prefix + ".pw1")), p, prefix + ".pw2");
  return ops::add(x, y);
}

// 2x2 neighborhood concat + linear + LN: [N, h, w, C] -> [N, h/2, w/2, C']
template <typename T>
Var<T> patch_merge(const Var<T>& x, const ParamStore<T>& p, const std::string& prefix) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  require(h % 2 == 0 && w % 2 == 0, "patch_merge: odd token grid ", h, "x", w);
  auto y = ops::reshape(x, {n, h / 2, 2, w / 2, 2, c});
  y = ops::reshape(ops::permute(y, {0, 1, 3, 2, 4, 5}), {n, h / 2, w / 2, 4 * c});
  return apply_norm(apply_linear(y, p, prefix), p, prefix + ".norm");
}

// Linear to 4 C' then pixel shuffle + LN: [N, h, w, C] -> [N, 2h, 2w, C']
template <typename T>
Var<T> patch_expand(const Var<T>& x, const ParamStore<T>& p, const std::string& prefix) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto y = apply_linear(x, p, prefix);
  const std::size_t c = y.dim(3) / 4;
  y = ops::reshape(y, {n, h, w, 2, 2, c});
  y = ops::reshape(ops::permute(y, {0, 1, 3, 2, 4, 5}), {n, 2 * h, 2 * w, c});
  return apply_norm(y, p, prefix + ".norm");
}

// Tokens [N, h, w, C0] -> pixels [N, h p, w p, 4].
template <typename T>
Var<T> patch_recover(const Var<T>& x, const ParamStore<T>& p, const ScotConfig& cfg) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), ps = cfg.patch;
  auto y = apply_linear(x, p, "trunk.head");
  y = ops::reshape(y, {n, h, w, ps, ps, kChannels});
  return ops::reshape(ops::permute(y, {0, 1, 3, 2, 4, 5}), {n, h * ps, w * ps, kChannels});
}

// Called after each stage's final attention block with tokens [N, h, w, C].
// The lift uses it to interleave vertical attention; the 2D model passes none.
template <typename T>
using StageHook = std::function<Var<T>(const Var<T>& tokens, bool decoder, std::size_t stage)>;

template <typename T>
Var<T> run_stage_blocks(Var<T> x, const ParamStore<T>& p, const ScotConfig& cfg, const std::string& prefix,
                        std::size_t s) {
  const auto win = cfg.stage_window(s);
  for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b)
    x = window_attention(x, p, prefix + ".blk" + std::to_string(b), cfg.heads[s], win, b % 2 == 1);
  return x;
}

// One-step predictor: scaled state [N, H, W, 4] -> predicted next state [N, H, W, 4].
template <typename T>
Var<T> unet_forward(const Var<T>& x, const ParamStore<T>& p, const ScotConfig& cfg, const StageHook<T>& hook = {}) {
  auto t = patch_embed(x, p, cfg);
  std::vector<Var<T>> skips;
  for (std::size_t s = 0; s < cfg.stages; ++s) {
    t = run_stage_blocks(t, p, cfg, "trunk.enc" + std::to_string(s), s);
    if (hook) t = hook(t, false, s);
    if (s + 1 < cfg.stages) {
      skips.push_back(t);
      t = patch_merge(t, p, "trunk.down" + std::to_string(s));
    }
  }
  for (std::size_t s = cfg.stages - 1; s-- > 0;) {
    const std::string tag = std::to_string(s);
    t = patch_expand(t, p, "trunk.up" + tag);
    auto skip = convnext_block(skips[s], p, "trunk.skip" + tag);
    t = apply_linear(ops::concat_last<T>({t, skip}), p, "trunk.fuse" + tag);
    t = run_stage_blocks(t, p, cfg, "trunk.dec" + tag, s);
    if (hook) t = hook(t, true, s);
  }
  return patch_recover(t, p, cfg);
}

}  // namespace scotlift::model
