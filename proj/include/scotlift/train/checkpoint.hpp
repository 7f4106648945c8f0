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

// Checkpoint file layout (all integers little-endian):
//
//   "SCLTCKPT"           8 bytes magic
//   version              u32
//   header length        u64
//   header               JSON: configs, hash, step, tensor table
//   payload              float32 values, then Adam m and v, per tensor in table order
//   checksum             u64 FNV-1a over every preceding byte

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "scotlift/data/archive.hpp"
#include "scotlift/model/config.hpp"
#include "scotlift/train/optim.hpp"

namespace scotlift::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'S', 'C', 'L', 'T', 'C', 'K', 'P', 'T'};

struct Checkpoint {
  model::ScotConfig trunk;
  std::optional<model::LiftConfig> lift;
  ParamStore<float> params;
  AdamState opt;
  long step = 0;
  std::string config_hash;
  std::string scaler_ref;  // identifies the statistics the model was trained against
  std::optional<data::ScalerStats> scaler;
};

inline std::string checkpoint_hash(const Checkpoint& c) {
  return model::config_hash(c.trunk, c.lift ? &*c.lift : nullptr);
}

namespace detail {

template <typename U>
void put(std::string& out, U v) {
  char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  out.append(b, sizeof(U));
}

template <typename U>
U get(const std::string& in, std::size_t pos) {
  char b[sizeof(U)];
  std::memcpy(b, in.data() + pos, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  U v;
  std::memcpy(&v, b, sizeof(U));
  return v;
}

inline void put_floats(std::string& out, const Tensor<float>& t) {
  for (float f : t.values()) put(out, f);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  nlohmann::ordered_json h;
  h["model"] = c.trunk;
  if (c.lift) h["lift"] = *c.lift;
  h["config_hash"] = c.config_hash;
  h["step"] = c.step;
  h["adam_t"] = c.opt.t;
  h["scaler_ref"] = c.scaler_ref;
  if (c.scaler)
    h["scaler"] = {{"levels", c.scaler->levels}, {"mean", c.scaler->mean}, {"std", c.scaler->std},
                   {"source", c.scaler->source}};
  const bool has_opt = !c.opt.m.empty();
  h["optimizer_state"] = has_opt;
  auto& table = h["tensors"] = nlohmann::ordered_json::array();
  for (const auto& [name, v] : c.params.items()) table.push_back({{"name", name}, {"shape", v.shape()}});
  const std::string header = h.dump();

  std::string out(kCheckpointMagic, 8);
  detail::put(out, kCheckpointVersion);
  detail::put(out, static_cast<std::uint64_t>(header.size()));
  out += header;
  for (const auto& [_, v] : c.params.items()) detail::put_floats(out, v.value());
  if (has_opt)
    for (const auto& [name, v] : c.params.items()) {
      detail::put_floats(out, c.opt.m.at(name));
      detail::put_floats(out, c.opt.v.at(name));
    }
  detail::put(out, fnv1a(out));
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& where) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw FormatError("not a scotlift checkpoint: " + where);
  const auto version = detail::get<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint format version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kCheckpointVersion) + "): " + where);
  const auto hlen = detail::get<std::uint64_t>(bytes, 12);
  if (20 + hlen + 8 > bytes.size()) throw CorruptionError("checkpoint truncated in header: " + where);
  const std::size_t body = bytes.size() - 8;
  const std::uint64_t want = detail::get<std::uint64_t>(bytes, body);
  nlohmann::ordered_json h;
  try {
    h = nlohmann::ordered_json::parse(bytes.substr(20, hlen));
  } catch (const nlohmann::json::exception&) {
    throw CorruptionError("checkpoint header unreadable: " + where);
  }
  Checkpoint c;
  std::size_t expect = 20 + hlen;
  try {
    c.trunk = h.at("model").get<model::ScotConfig>();
    if (h.contains("lift")) c.lift = h.at("lift").get<model::LiftConfig>();
    c.config_hash = h.at("config_hash").get<std::string>();
    c.step = h.at("step").get<long>();
    c.opt.t = h.at("adam_t").get<long>();
    c.scaler_ref = h.at("scaler_ref").get<std::string>();
    if (h.contains("scaler")) {
      data::ScalerStats s;
      s.levels = h["scaler"].at("levels").get<std::size_t>();
      s.mean = h["scaler"].at("mean").get<std::vector<double>>();
      s.std = h["scaler"].at("std").get<std::vector<double>>();
      s.source = h["scaler"].at("source").get<std::string>();
      c.scaler = std::move(s);
    }
    const bool has_opt = h.at("optimizer_state").get<bool>();
    std::size_t total = 0;
    for (const auto& t : h.at("tensors")) total += numel(t.at("shape").get<Shape>());
    expect += total * 4 * (has_opt ? 3 : 1);
    if (expect + 8 != bytes.size())
      throw CorruptionError("checkpoint size " + std::to_string(bytes.size()) + " bytes, expected " +
                            std::to_string(expect + 8) + ": " + where);
    if (fnv1a(std::string_view(bytes.data(), body)) != want) throw CorruptionError("checkpoint checksum mismatch: " + where);
    std::size_t pos = 20 + hlen;
    auto read_tensor = [&](const Shape& shape) {
      Tensor<float> t(shape);
      for (auto& f : t.storage()) {
        f = detail::get<float>(bytes, pos);
        pos += 4;
      }
      return t;
    };
    for (const auto& t : h.at("tensors"))
      c.params.add(t.at("name").get<std::string>(), read_tensor(t.at("shape").get<Shape>()));
    if (has_opt)
      for (const auto& t : h.at("tensors")) {
        const auto name = t.at("name").get<std::string>();
        const auto shape = t.at("shape").get<Shape>();
        c.opt.m[name] = read_tensor(shape);
        c.opt.v[name] = read_tensor(shape);
      }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("checkpoint header incomplete: ") + e.what() + ": " + where);
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(c);
  data::detail::write_file(path, bytes.data(), bytes.size());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  const auto raw = data::detail::read_file(path);
  return parse_checkpoint(std::string(raw.begin(), raw.end()), path.string());
}

// Refuses to continue from a checkpoint of a different architecture.
inline void check_resume(const Checkpoint& c, const std::string& expected_hash) {
  if (c.config_hash != expected_hash)
    throw ConfigError("model", "checkpoint config hash " + c.config_hash + " does not match run config hash " +
                                   expected_hash);
}

}  // namespace scotlift::train
