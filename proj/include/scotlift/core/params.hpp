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

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "scotlift/core/autodiff.hpp"
#include "scotlift/core/rng.hpp"

namespace scotlift {

// Flat parameter store keyed by dotted names ("trunk.enc0.blk1.attn.qkv.w").
// The first path component names the sub-tree: "trunk" for the 2D model,
// "lift" for the vertical additions.
template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, Var<T>>;

  Var<T>& add(const std::string& name, Tensor<T> value) {
    require(!params_.count(name), "duplicate parameter '", name, "'");
    return params_.emplace(name, Var<T>(std::move(value), true)).first->second;
  }

  const Var<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  Var<T>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Map& items() { return params_; }
  const Map& items() const { return params_; }
  std::size_t tensor_count() const { return params_.size(); }

  // Exact number of scalar parameters whose name starts with `prefix`.
  std::size_t count(std::string_view prefix = {}) const {
    std::size_t n = 0;
    for (const auto& [name, v] : params_)
      if (std::string_view(name).substr(0, prefix.size()) == prefix) n += v.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : params_) v.zero_grad();
  }

  bool all_finite() const {
    for (const auto& [_, v] : params_)
      if (!v.value().all_finite()) return false;
    return true;
  }

  // Order-sensitive FNV-1a over names and raw value bytes.
  std::uint64_t hash(std::string_view prefix = {}) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, v] : params_) {
      if (std::string_view(name).substr(0, prefix.size()) != prefix) continue;
      h = fnv1a(name, h);
      const auto* bytes = reinterpret_cast<const char*>(v.value().data());
      h = fnv1a(std::string_view(bytes, v.size() * sizeof(T)), h);
    }
    return h;
  }

  // Copies every entry under `prefix` from `other` (shapes must agree).
  template <typename U>
  void assign_from(const ParamStore<U>& other, std::string_view prefix) {
    std::size_t copied = 0;
    for (auto& [name, v] : params_) {
      if (std::string_view(name).substr(0, prefix.size()) != prefix) continue;
      require(other.contains(name), "source checkpoint lacks parameter '", name, "'");
      const auto& src = other.get(name).value();
      require(src.shape() == v.shape(), "shape mismatch for '", name, "': ", to_string(src.shape()), " vs ",
              to_string(v.shape()));
      v.mutable_value() = src.template cast<T>();
      ++copied;
    }
    require(copied > 0, "no parameters under prefix '", prefix, "'");
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, v] : params_) out.add(name, v.value().template cast<U>());
    return out;
  }

 private:
  Map params_;
};

namespace init {

template <typename T>
Tensor<T> trunc_normal(Shape shape, double std, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(rng.trunc_normal(std));
  return t;
}

template <typename T>
Tensor<T> uniform(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace init

}  // namespace scotlift
