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

// Reader for classic NetCDF (CDF-1 and CDF-2 64-bit offset). Numeric
// variables only; attributes are surfaced as strings. Everything in the file
// is big-endian.
//
//   header := 'C' 'D' 'F' version numrecs dim_list gatt_list var_list
//   var    := name dimids vatt_list nc_type vsize begin

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "scotlift/data/archive.hpp"

namespace scotlift::data {

enum class NcType : std::uint32_t { Byte = 1, Char = 2, Short = 3, Int = 4, Float = 5, Double = 6 };

struct NcDimension {
  std::string name;
  std::size_t length = 0;  // current record count for the unlimited dimension
  bool unlimited = false;
};

struct NcVariable {
  std::string name;
  std::vector<std::string> dims;
  Shape shape;
  NcType type = NcType::Double;
  bool record = false;
  std::map<std::string, std::string> attributes;
  std::vector<double> values;  // declared dimension order, row-major
};

struct NcDataset {
  int version = 1;
  std::vector<NcDimension> dimensions;
  std::map<std::string, std::string> attributes;
  std::map<std::string, NcVariable> variables;  // requested ones, with values

  const NcVariable& at(const std::string& name) const {
    auto it = variables.find(name);
    if (it == variables.end()) throw LookupError("variable '" + name + "' not loaded");
    return it->second;
  }
};

namespace detail {

inline std::size_t nc_type_size(NcType t) {
  switch (t) {
    case NcType::Byte:
    case NcType::Char:
      return 1;
    case NcType::Short:
      return 2;
    case NcType::Int:
    case NcType::Float:
      return 4;
    case NcType::Double:
      return 8;
  }
  throw FormatError("unknown NetCDF type " + std::to_string(static_cast<std::uint32_t>(t)));
}

class BigEndianCursor {
 public:
  BigEndianCursor(const std::vector<char>& bytes, std::string path) : b_(bytes), path_(std::move(path)) {}

  std::uint64_t uint(std::size_t n) {
    need(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v = (v << 8) | static_cast<unsigned char>(b_[pos_ + i]);
    pos_ += n;
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }

  std::string name() {
    const std::size_t len = u32();
    need(len);
    std::string s(b_.data() + pos_, len);
    pos_ += len;
    skip_pad(len);
    return s;
  }

  void skip_pad(std::size_t len) {
    const std::size_t pad = (4 - len % 4) % 4;
    need(pad);
    pos_ += pad;
  }

  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw FormatError("truncated NetCDF header in " + path_);
  }

  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }
  const char* at(std::size_t p) const { return b_.data() + p; }
  std::size_t size() const { return b_.size(); }

 private:
  const std::vector<char>& b_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline double decode_value(const char* p, NcType t) {
  auto be = [p](std::size_t n) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v = (v << 8) | static_cast<unsigned char>(p[i]);
    return v;
  };
  switch (t) {
    case NcType::Byte:
      return static_cast<std::int8_t>(p[0]);
    case NcType::Char:
      return static_cast<unsigned char>(p[0]);
    case NcType::Short:
      return static_cast<std::int16_t>(be(2));
    case NcType::Int:
      return static_cast<std::int32_t>(be(4));
    case NcType::Float: {
      const auto u = static_cast<std::uint32_t>(be(4));
      float f;
      std::memcpy(&f, &u, 4);
      return f;
    }
    case NcType::Double: {
      const auto u = be(8);
      double d;
      std::memcpy(&d, &u, 8);
      return d;
    }
  }
  return 0.0;
}

inline std::map<std::string, std::string> read_attributes(BigEndianCursor& c) {
  std::map<std::string, std::string> out;
  const std::uint32_t tag = c.u32();
  const std::uint32_t n = c.u32();
  if (tag == 0 && n == 0) return out;
  if (tag != 0x0C) throw FormatError("expected attribute list tag");
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = c.name();
    const auto type = static_cast<NcType>(c.u32());
    const std::size_t count = c.u32();
    const std::size_t bytes = count * nc_type_size(type);
    c.need(bytes);
    const char* p = c.at(c.pos());
    if (type == NcType::Char) {
      out[name] = std::string(p, count);
    } else {
      std::ostringstream os;
      for (std::size_t k = 0; k < count; ++k) os << (k ? " " : "") << decode_value(p + k * nc_type_size(type), type);
      out[name] = os.str();
    }
    c.seek(c.pos() + bytes);
    c.skip_pad(bytes);
  }
  return out;
}

}  // namespace detail

// Reads the named variables (all numeric ones when `names` is empty).
inline NcDataset read_netcdf_classic(const std::filesystem::path& path, const std::vector<std::string>& names = {}) {
  const auto bytes = detail::read_file(path);
  const std::string where = path.string();
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), "\x89HDF", 4) == 0)
    throw UnsupportedFormatError("NetCDF-4/HDF5 file not supported: " + where);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "CDF", 3) != 0)
    throw FormatError("not a NetCDF classic file (bad magic): " + where);
  const int version = static_cast<unsigned char>(bytes[3]);
  if (version != 1 && version != 2)
    throw UnsupportedFormatError("NetCDF format version " + std::to_string(version) +
                                 " not supported (classic CDF-1/CDF-2 only): " + where);

  detail::BigEndianCursor c(bytes, where);
  c.seek(4);
  NcDataset ds;
  ds.version = version;
  const std::uint32_t numrecs_raw = c.u32();

  // Dimensions.
  {
    const std::uint32_t tag = c.u32(), n = c.u32();
    if (!(tag == 0 && n == 0)) {
      if (tag != 0x0A) throw FormatError("expected dimension list tag in " + where);
      for (std::uint32_t i = 0; i < n; ++i) {
        NcDimension d;
        d.name = c.name();
        d.length = c.u32();
        d.unlimited = d.length == 0;
        ds.dimensions.push_back(d);
      }
    }
  }
  ds.attributes = detail::read_attributes(c);

  struct Entry {
    NcVariable var;
    std::size_t vsize = 0;
    std::uint64_t begin = 0;
  };
  std::vector<Entry> entries;
  {
    const std::uint32_t tag = c.u32(), n = c.u32();
    if (!(tag == 0 && n == 0)) {
      if (tag != 0x0B) throw FormatError("expected variable list tag in " + where);
      for (std::uint32_t i = 0; i < n; ++i) {
        Entry e;
        e.var.name = c.name();
        const std::uint32_t ndims = c.u32();
        for (std::uint32_t k = 0; k < ndims; ++k) {
          const std::uint32_t id = c.u32();
          if (id >= ds.dimensions.size()) throw FormatError("dimension id out of range in " + where);
          e.var.dims.push_back(ds.dimensions[id].name);
          if (k == 0 && ds.dimensions[id].unlimited) e.var.record = true;
          e.var.shape.push_back(ds.dimensions[id].length);
        }
        e.var.attributes = detail::read_attributes(c);
        e.var.type = static_cast<NcType>(c.u32());
        detail::nc_type_size(e.var.type);
        e.vsize = c.u32();
        e.begin = c.uint(version == 1 ? 4 : 8);
        entries.push_back(std::move(e));
      }
    }
  }

  // Record layout: each record holds one slab of every record variable.
  std::size_t rec_vars = 0, recsize = 0;
  for (const auto& e : entries)
    if (e.var.record) {
      ++rec_vars;
      recsize += e.vsize;
    }
  std::size_t numrecs = numrecs_raw;
  if (numrecs_raw == 0xFFFFFFFFu) numrecs = 0;  // streaming: count from file size below

  for (auto& e : entries) {
    std::size_t slab = detail::nc_type_size(e.var.type);
    for (std::size_t k = e.var.record ? 1 : 0; k < e.var.shape.size(); ++k) slab *= e.var.shape[k];
    // A lone record variable is not padded between records.
    if (e.var.record && rec_vars == 1) recsize = slab;
    if (e.var.record) {
      if (numrecs_raw == 0xFFFFFFFFu && recsize > 0 && bytes.size() > e.begin)
        numrecs = (bytes.size() - e.begin) / recsize;
      e.var.shape[0] = numrecs;
    }
  }
  for (auto& d : ds.dimensions)
    if (d.unlimited) d.length = numrecs;

  auto wanted = [&](const std::string& n) {
    if (names.empty()) return true;
    for (const auto& x : names)
      if (x == n) return true;
    return false;
  };
  for (const auto& n : names) {
    bool found = false;
    for (const auto& e : entries) found = found || e.var.name == n;
    if (!found) throw LookupError("variable '" + n + "' not found in " + where);
  }

  for (auto& e : entries) {
    if (!wanted(e.var.name)) continue;
    if (e.var.type == NcType::Char && !names.empty())
      throw FormatError("variable '" + e.var.name + "' is character data, not numeric");
    if (e.var.type == NcType::Char) continue;
    const std::size_t ts = detail::nc_type_size(e.var.type);
    std::size_t per_rec = 1;
    for (std::size_t k = e.var.record ? 1 : 0; k < e.var.shape.size(); ++k) per_rec *= e.var.shape[k];
    const std::size_t nrec = e.var.record ? numrecs : 1;
    e.var.values.resize(per_rec * nrec);
    for (std::size_t r = 0; r < nrec; ++r) {
      const std::uint64_t off = e.begin + r * (e.var.record ? recsize : 0);
      if (off + per_rec * ts > bytes.size())
        throw CorruptionError("variable '" + e.var.name + "': data extends past end of " + where);
      for (std::size_t k = 0; k < per_rec; ++k)
        e.var.values[r * per_rec + k] = detail::decode_value(bytes.data() + off + k * ts, e.var.type);
    }
    ds.variables.emplace(e.var.name, std::move(e.var));
  }
  return ds;
}

}  // namespace scotlift::data
