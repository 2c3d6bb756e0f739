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

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

#include "damer/core/error.hpp"
#include "damer/core/io.hpp"
#include "damer/features/spectral.hpp"

namespace damer::features {

/// Binary layout of a ".dmrf" feature cache (little-endian):
///
///   "DMRF" u32 version
///   for gram in (mel, coch):
///     u32 dtype (1 = float32), u32 rank (= 2), u32 dims[rank], f32 payload
inline constexpr std::uint32_t kCacheVersion = 1;
inline constexpr std::uint32_t kDtypeFloat32 = 1;

inline std::vector<char> encode_feature_cache(const FeaturePair& pair) {
  BinaryWriter w;
  w.magic("DMRF");
  w.u32(kCacheVersion);
  for (const Gram* gram : {&pair.mel, &pair.coch}) {
    w.u32(kDtypeFloat32);
    w.u32(2);
    w.u32(static_cast<std::uint32_t>(gram->rows));
    w.u32(static_cast<std::uint32_t>(gram->frames));
    w.f32s(gram->values);
  }
  return w.buffer();
}

inline FeaturePair decode_feature_cache(std::vector<char> bytes) {
  BinaryReader r(std::move(bytes));
  if (!r.magic("DMRF")) fail(ErrorKind::kDataError, "not a DMRF feature cache");
  if (const auto v = r.u32(); v != kCacheVersion) {
    fail(ErrorKind::kDataError, "unsupported feature cache version " + std::to_string(v));
  }
  FeaturePair pair;
  for (Gram* gram : {&pair.mel, &pair.coch}) {
    if (r.u32() != kDtypeFloat32) fail(ErrorKind::kDataError, "feature cache dtype must be float32");
    if (r.u32() != 2) fail(ErrorKind::kDataError, "feature cache grams must be rank 2");
    gram->rows = r.u32();
    gram->frames = r.u32();
    gram->values = r.f32s(gram->rows * gram->frames);
  }
  if (!r.at_end()) fail(ErrorKind::kDataError, "trailing bytes in feature cache");
  return pair;
}

inline void save_feature_cache(const std::filesystem::path& path, const FeaturePair& pair) {
  write_file_atomic(path, encode_feature_cache(pair));
}

inline FeaturePair load_feature_cache(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::kDataError, "missing feature cache " + path.string());
  return decode_feature_cache(read_file_bytes(path));
}

/// Sidecar manifest next to each cache.
inline nlohmann::json cache_sidecar(const std::string& track_id, std::uint64_t config_hash, const FeaturePair& pair) {
  return {{"track_id", track_id},
          {"format", "DMRF"},
          {"version", kCacheVersion},
          {"config_hash", hex64(config_hash)},
          {"mel_dims", {pair.mel.rows, pair.mel.frames}},
          {"coch_dims", {pair.coch.rows, pair.coch.frames}}};
}

}  // namespace damer::features
