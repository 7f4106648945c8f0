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

// Tensor archive: a directory holding manifest.json plus one raw
// little-endian float32 blob per variable, row-major [time, level, lat, lon].
//
//   manifest.json   {"format": "scotlift-archive", "version": 1,
//                    "dtype": "float32", "endianness": "little",
//                    "axes": [...], "shape": [...], "variables": [...],
//                    "sigmas": [...], "sols": [...], "step": dt, ...}
//   <var>.f32       product(shape) * 4 bytes
//
// In memory a Series keeps the model-space layout [time, level, lat, lon, 4];
// only the three physical channels are persisted.

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "scotlift/data/grid.hpp"

namespace scotlift::data {

namespace fs = std::filesystem;

inline constexpr int kArchiveVersion = 1;

struct Series {
  Tensor<float> values;              // [time, level, lat, lon, 4]
  std::vector<std::string> variables{"T", "u", "v"};
  std::vector<double> sigmas;
  std::vector<double> sols;
  double step = 1.0;                 // native sample spacing in sols
  nlohmann::ordered_json attributes = nlohmann::ordered_json::object();

  std::size_t times() const { return values.rank() ? values.dim(0) : 0; }
  std::size_t levels() const { return values.dim(1); }
  std::size_t n_lat() const { return values.dim(2); }
  std::size_t n_lon() const { return values.dim(3); }
  std::size_t sample_size() const { return values.size() / std::max<std::size_t>(times(), 1); }

  // [level, lat, lon, 4] copy of timestamp t.
  Tensor<float> state(std::size_t t) const {
    require(t < times(), "Series::state: index ", t, " out of ", times());
    Tensor<float> out(Shape(values.shape().begin() + 1, values.shape().end()));
    std::memcpy(out.data(), values.data() + t * sample_size(), sample_size() * sizeof(float));
    return out;
  }

  void validate() const {
    require(values.rank() == 5 && values.dim(4) == kChannels, "series values must be [time, level, lat, lon, 4], got ",
            to_string(values.shape()));
    require(variables.size() == kPhysicalChannels, "series needs ", kPhysicalChannels, " variable names");
    require(sols.size() == times(), "series has ", times(), " samples but ", sols.size(), " timestamps");
    require(sigmas.size() == levels(), "series has ", levels(), " levels but ", sigmas.size(), " sigmas");
    for (std::size_t i = 1; i < sols.size(); ++i)
      require(sols[i] > sols[i - 1], "timestamps must be strictly increasing (index ", i, ")");
    require(step > 0.0, "series step must be positive");
  }
};

// Indices t with a successor exactly one native step later.
inline std::vector<std::size_t> consecutive_pairs(const Series& s) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t + 1 < s.times(); ++t)
    if (std::abs(s.sols[t + 1] - s.sols[t] - s.step) <= 1e-6 * s.step) out.push_back(t);
  return out;
}

namespace detail {

inline void to_little_endian(std::vector<char>& bytes) {
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i + 3 < bytes.size(); i += 4) {
      std::swap(bytes[i], bytes[i + 3]);
      std::swap(bytes[i + 1], bytes[i + 2]);
    }
  }
}

inline std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

inline void write_file(const fs::path& path, const char* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(data, static_cast<std::streamsize>(size));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace detail

struct ArchiveSummary {
  fs::path path;
  Shape shape;  // [time, level, lat, lon]
  std::vector<std::string> blobs;
  std::size_t bytes_per_blob = 0;
};

// The directory must already exist; the archive files inside it are replaced.
inline ArchiveSummary write_archive(const Series& s, const fs::path& dir) {
  s.validate();
  if (!fs::is_directory(dir)) throw IoError("archive directory does not exist: " + dir.string());
  const Shape shape{s.times(), s.levels(), s.n_lat(), s.n_lon()};
  const std::size_t n = numel(shape);
  ArchiveSummary summary{dir, shape, {}, n * sizeof(float)};
  for (std::size_t c = 0; c < kPhysicalChannels; ++c) {
    std::vector<char> bytes(n * sizeof(float));
    for (std::size_t i = 0; i < n; ++i) std::memcpy(bytes.data() + i * 4, &s.values[i * kChannels + c], 4);
    detail::to_little_endian(bytes);
    const std::string name = s.variables[c] + ".f32";
    detail::write_file(dir / name, bytes.data(), bytes.size());
    summary.blobs.push_back(name);
  }
  nlohmann::ordered_json m;
  m["format"] = "scotlift-archive";
  m["version"] = kArchiveVersion;
  m["dtype"] = "float32";
  m["endianness"] = "little";
  m["axes"] = {"time", "level", "lat", "lon"};
  m["shape"] = shape;
  m["variables"] = s.variables;
  m["sigmas"] = s.sigmas;
  m["sols"] = s.sols;
  m["step"] = s.step;
  m["attributes"] = s.attributes;
  const std::string text = m.dump(2) + "\n";
  detail::write_file(dir / "manifest.json", text.data(), text.size());
  return summary;
}

struct TimeWindow {
  double begin = -INFINITY;  // inclusive
  double end = INFINITY;     // exclusive
};

inline nlohmann::ordered_json read_manifest(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw IoError("archive manifest not found: " + mpath.string());
  const auto bytes = detail::read_file(mpath);
  nlohmann::ordered_json m;
  try {
    m = nlohmann::ordered_json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest " + mpath.string() + ": " + e.what());
  }
  return m;
}

inline Series read_archive(const fs::path& dir, std::optional<TimeWindow> window = std::nullopt) {
  const auto m = read_manifest(dir);
  Series s;
  Shape shape;
  try {
    if (m.value("format", "") != "scotlift-archive") throw FormatError("not a scotlift archive: " + dir.string());
    const int version = m.at("version").get<int>();
    if (version != kArchiveVersion)
      throw FormatError("archive version " + std::to_string(version) + " unsupported (expected " +
                        std::to_string(kArchiveVersion) + ")");
    const auto dtype = m.at("dtype").get<std::string>();
    if (dtype != "float32") throw FormatError("unknown dtype '" + dtype + "' in " + dir.string());
    if (m.at("endianness").get<std::string>() != "little") throw FormatError("archive must be little-endian");
    shape = m.at("shape").get<Shape>();
    s.variables = m.at("variables").get<std::vector<std::string>>();
    s.sigmas = m.at("sigmas").get<std::vector<double>>();
    s.sols = m.at("sols").get<std::vector<double>>();
    s.step = m.at("step").get<double>();
    if (m.contains("attributes")) s.attributes = m.at("attributes");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  if (shape.size() != 4 || s.variables.size() != kPhysicalChannels || s.sols.size() != shape[0] ||
      s.sigmas.size() != shape[1])
    throw FormatError("inconsistent manifest in " + dir.string());

  std::vector<std::size_t> keep;
  for (std::size_t t = 0; t < shape[0]; ++t)
    if (!window || (s.sols[t] >= window->begin && s.sols[t] < window->end)) keep.push_back(t);

  const std::size_t per_time = shape[1] * shape[2] * shape[3];
  s.values = Tensor<float>(Shape{keep.size(), shape[1], shape[2], shape[3], kChannels});
  for (std::size_t c = 0; c < kPhysicalChannels; ++c) {
    const fs::path blob = dir / (s.variables[c] + ".f32");
    if (!fs::exists(blob)) throw CorruptionError("variable '" + s.variables[c] + "': blob missing (" + blob.string() + ")");
    auto bytes = detail::read_file(blob);
    const std::size_t expect = numel(shape) * sizeof(float);
    if (bytes.size() != expect)
      throw CorruptionError("variable '" + s.variables[c] + "': blob has " + std::to_string(bytes.size()) +
                            " bytes, expected " + std::to_string(expect));
    detail::to_little_endian(bytes);
    for (std::size_t i = 0; i < keep.size(); ++i) {
      const char* src = bytes.data() + keep[i] * per_time * 4;
      for (std::size_t k = 0; k < per_time; ++k)
        std::memcpy(&s.values[(i * per_time + k) * kChannels + c], src + k * 4, 4);
    }
  }
  std::vector<double> sols;
  for (auto t : keep) sols.push_back(s.sols[t]);
  s.sols = std::move(sols);
  return s;
}

// Subset of timestamps, preserving order.
inline Series select_times(const Series& s, const std::vector<std::size_t>& idx) {
  Series out;
  out.variables = s.variables;
  out.sigmas = s.sigmas;
  out.step = s.step;
  out.attributes = s.attributes;
  Shape shape = s.values.shape();
  shape[0] = idx.size();
  out.values = Tensor<float>(shape);
  const std::size_t n = s.sample_size();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::memcpy(out.values.data() + i * n, s.values.data() + idx[i] * n, n * sizeof(float));
    out.sols.push_back(s.sols[idx[i]]);
  }
  return out;
}

// Train and validation sol intervals, half-open unless `closed` is set.
struct SplitSpec {
  double train_begin = 0.0, train_end = 0.0;
  double val_begin = 0.0, val_end = 0.0;
  bool closed = false;

  bool in_train(double t) const { return t >= train_begin && (closed ? t <= train_end : t < train_end); }
  bool in_val(double t) const { return t >= val_begin && (closed ? t <= val_end : t < val_end); }

  void validate() const {
    require(train_begin < train_end || (closed && train_begin == train_end), "split: empty train range");
    require(val_begin < val_end || (closed && val_begin == val_end), "split: empty validation range");
    require(closed ? train_end < val_begin : train_end <= val_begin,
            "split: train range [", train_begin, ", ", train_end, ") must precede validation range [", val_begin,
            ", ", val_end, ")");
  }
};

// Mars Years 28-31 train, Mars Year 32 validation; both endpoints inclusive.
inline SplitSpec paper_split() { return {2674.416748, 5348.750000, 5348.833496, 6031.000000, true}; }

inline std::pair<Series, Series> split_chronological(const Series& s, const SplitSpec& spec) {
  spec.validate();
  std::vector<std::size_t> train, val;
  for (std::size_t t = 0; t < s.times(); ++t) {
    if (spec.in_train(s.sols[t]))
      train.push_back(t);
    else if (spec.in_val(s.sols[t]))
      val.push_back(t);
  }
  return {select_times(s, train), select_times(s, val)};
}

}  // namespace scotlift::data
