// Copyright 2026 The damer Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "damer/core/error.hpp"
#include "damer/core/io.hpp"
#include "damer/core/tensor.hpp"

namespace damer {

struct NamedArray {
  std::string name;
  Shape dims;
  std::vector<float> values;
};

/// Container behind the "DMRC" checkpoint file:
///
///   "DMRC" u32 version
///   u64 config_hash, str config_text
///   table parameters
///   u64 optimizer_step, table optimizer_state
///   table extras            (memory queue, input statistics, ...)
///
/// where `table` is u32 count followed by (str name, u32 rank, u32 dims[rank],
/// f32 payload[prod(dims)]) entries and `str` is u32 length + bytes.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint64_t config_hash = 0;
  std::string config_text;
  std::vector<NamedArray> parameters;
  std::uint64_t optimizer_step = 0;
  std::vector<NamedArray> optimizer_state;
  std::vector<NamedArray> extras;

  const NamedArray* find_extra(const std::string& name) const {
    for (const auto& a : extras) {
      if (a.name == name) return &a;
    }
    return nullptr;
  }
};

namespace detail {

inline void write_table(BinaryWriter& w, const std::vector<NamedArray>& table) {
  w.u32(static_cast<std::uint32_t>(table.size()));
  for (const auto& a : table) {
    if (shape_size(a.dims) != a.values.size()) fail(ErrorKind::kShapeMismatch, "checkpoint array " + a.name);
    w.str(a.name);
    w.u32(static_cast<std::uint32_t>(a.dims.size()));
    for (const auto d : a.dims) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(a.values);
  }
}

inline std::vector<NamedArray> read_table(BinaryReader& r) {
  std::vector<NamedArray> table(r.u32());
  for (auto& a : table) {
    a.name = r.str();
    a.dims.resize(r.u32());
    for (auto& d : a.dims) d = r.u32();
    a.values = r.f32s(shape_size(a.dims));
  }
  return table;
}

}  // namespace detail

inline std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  BinaryWriter w;
  w.magic("DMRC");
  w.u32(Checkpoint::kVersion);
  w.u64(ckpt.config_hash);
  w.str(ckpt.config_text);
  detail::write_table(w, ckpt.parameters);
  w.u64(ckpt.optimizer_step);
  detail::write_table(w, ckpt.optimizer_state);
  detail::write_table(w, ckpt.extras);
  return w.buffer();
}

inline Checkpoint decode_checkpoint(std::vector<char> bytes) {
  BinaryReader r(std::move(bytes));
  if (!r.magic("DMRC")) fail(ErrorKind::kCheckpointMismatch, "not a DMRC checkpoint");
  const auto version = r.u32();
  if (version != Checkpoint::kVersion) {
    fail(ErrorKind::kCheckpointMismatch, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config_hash = r.u64();
  ckpt.config_text = r.str();
  ckpt.parameters = detail::read_table(r);
  ckpt.optimizer_step = r.u64();
  ckpt.optimizer_state = detail::read_table(r);
  ckpt.extras = detail::read_table(r);
  if (!r.at_end()) fail(ErrorKind::kCheckpointMismatch, "trailing bytes after checkpoint");
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  write_file_atomic(path, bytes);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

template <typename T>
NamedArray to_named_array(const std::string& name, const Tensor<T>& t) {
  NamedArray a{name, t.dims(), {}};
  a.values.reserve(t.size());
  for (const T v : t.values()) a.values.push_back(static_cast<float>(v));
  return a;
}

}  // namespace damer
