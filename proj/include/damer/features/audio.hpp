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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "damer/core/error.hpp"
#include "damer/core/io.hpp"
#include "damer/core/keyvalue.hpp"

namespace damer::features {

inline constexpr double kSampleRate = 44100.0;

/// Analysis settings shared by both views. The defaults put exactly 87
/// half-overlapping frames on a 60 s segment.
struct FeatureConfig {
  double sample_rate = kSampleRate;
  double segment_start_s = 15.0;
  double segment_seconds = 60.0;
  double min_track_seconds = 30.0;
  std::size_t frame_len = 60136;
  std::size_t hop = 30068;
  double pre_emphasis = 0.97;
  std::size_t mel_bands = 128;
  double mel_fmin = 0.0;
  double mel_fmax = kSampleRate / 2.0;
  std::size_t coch_channels = 84;
  double coch_fmin = 50.0;
  double coch_fmax = 18000.0;
  double coch_power = 0.3;
  int gammatone_order = 4;
  double log_floor = 1e-10;

  std::size_t segment_samples() const { return static_cast<std::size_t>(std::llround(segment_seconds * sample_rate)); }
  std::size_t fft_size() const { return 2 * frame_len; }

  std::size_t frame_count() const {
    const auto total = segment_samples();
    if (frame_len > total) return 0;
    return 1 + (total - frame_len) / hop;
  }

  void validate() const {
    if (sample_rate != kSampleRate) fail(ErrorKind::kBadSampleRate, "only 44100 Hz is supported");
    if (frame_len == 0 || frame_len % 2 != 0) fail(ErrorKind::kConfigError, "frame_len must be even and positive");
    if (hop == 0) fail(ErrorKind::kConfigError, "hop must be positive");
    if (frame_len > segment_samples()) fail(ErrorKind::kConfigError, "frame_len exceeds segment length");
    if (mel_bands == 0 || coch_channels == 0) fail(ErrorKind::kConfigError, "band counts must be positive");
    if (!(mel_fmin >= 0.0 && mel_fmax > mel_fmin && mel_fmax <= sample_rate / 2.0)) {
      fail(ErrorKind::kConfigError, "mel frequency range");
    }
    if (!(coch_fmin > 0.0 && coch_fmax > coch_fmin && coch_fmax < sample_rate / 2.0)) {
      fail(ErrorKind::kConfigError, "gammatone frequency range");
    }
    if (!(log_floor > 0.0) || !(coch_power > 0.0) || gammatone_order < 1) {
      fail(ErrorKind::kConfigError, "log_floor, coch_power and gammatone_order must be positive");
    }
  }

  std::map<std::string, ConfigField> fields() {
    return {{"sample_rate", &sample_rate},
            {"segment_start_s", &segment_start_s},
            {"segment_seconds", &segment_seconds},
            {"min_track_seconds", &min_track_seconds},
            {"frame_len", &frame_len},
            {"hop", &hop},
            {"pre_emphasis", &pre_emphasis},
            {"mel_bands", &mel_bands},
            {"mel_fmin", &mel_fmin},
            {"mel_fmax", &mel_fmax},
            {"coch_channels", &coch_channels},
            {"coch_fmin", &coch_fmin},
            {"coch_fmax", &coch_fmax},
            {"coch_power", &coch_power},
            {"gammatone_order", &gammatone_order},
            {"log_floor", &log_floor}};
  }

  /// Stable text form; its FNV-1a hash tags every feature cache.
  std::string canonical() const {
    auto copy = *this;
    return format_key_values(copy.fields());
  }

  std::uint64_t hash() const { return fnv1a64(canonical()); }
};

/// Every key is optional; absent keys keep their defaults.
inline FeatureConfig parse_feature_config(const std::string& text) {
  FeatureConfig cfg;
  apply_key_values(text, cfg.fields());
  cfg.validate();
  return cfg;
}

struct AudioSegment {
  std::vector<double> samples;
  double sample_rate = kSampleRate;
  double start_offset = 0.0;  // seconds into the track
};

/// Cuts [start, start + 60 s) out of a track, zero-padding past its end.
inline AudioSegment select_segment(std::span<const double> track, double sample_rate,
                                   const FeatureConfig& cfg = {}) {
  if (sample_rate != kSampleRate) fail(ErrorKind::kBadSampleRate, "sample rate " + std::to_string(sample_rate));
  const double duration = static_cast<double>(track.size()) / sample_rate;
  if (duration < cfg.min_track_seconds) {
    fail(ErrorKind::kTrackTooShort, "track lasts " + std::to_string(duration) + " s");
  }
  const auto begin = static_cast<std::size_t>(std::llround(cfg.segment_start_s * sample_rate));
  const std::size_t length = cfg.segment_samples();
  AudioSegment seg;
  seg.sample_rate = sample_rate;
  seg.start_offset = cfg.segment_start_s;
  seg.samples.assign(length, 0.0);
  for (std::size_t i = 0; i < length && begin + i < track.size(); ++i) seg.samples[i] = track[begin + i];
  return seg;
}

/// x'(n) = x(n) - coeff * x(n - 1), with x(-1) = 0.
inline std::vector<double> pre_emphasis(std::span<const double> x, double coeff = 0.97) {
  std::vector<double> out(x.size());
  double previous = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    out[n] = x[n] - coeff * previous;
    previous = x[n];
  }
  return out;
}

struct WavData {
  std::vector<double> samples;  // mono, in [-1, 1)
  double sample_rate = 0.0;
  int channels = 0;
};

/// 16-bit PCM RIFF/WAVE reader; multi-channel input is averaged to mono.
inline WavData read_wav(const std::filesystem::path& path) {
  BinaryReader r(read_file_bytes(path));
  if (!r.magic("RIFF")) fail(ErrorKind::kDataError, path.string() + ": not a RIFF file");
  r.u32();
  if (!r.magic("WAVE")) fail(ErrorKind::kDataError, path.string() + ": not a WAVE file");
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (true) {
    char id[4];
    r.bytes(id, 4);
    const std::uint32_t size = r.u32();
    const std::string tag(id, 4);
    if (tag == "fmt ") {
      std::vector<char> chunk(size);
      r.bytes(chunk.data(), size);
      BinaryReader fmt(std::move(chunk));
      format = static_cast<std::uint16_t>(fmt.u8() | (fmt.u8() << 8));
      channels = static_cast<std::uint16_t>(fmt.u8() | (fmt.u8() << 8));
      rate = fmt.u32();
      fmt.u32();
      fmt.u8();
      fmt.u8();
      bits = static_cast<std::uint16_t>(fmt.u8() | (fmt.u8() << 8));
      have_fmt = true;
    } else if (tag == "data") {
      if (!have_fmt) fail(ErrorKind::kDataError, path.string() + ": data chunk before fmt");
      if (format != 1 || bits != 16 || channels == 0) {
        fail(ErrorKind::kDataError, path.string() + ": only 16-bit PCM is supported");
      }
      const std::size_t frames = size / (2u * channels);
      WavData wav;
      wav.sample_rate = rate;
      wav.channels = channels;
      wav.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        double total = 0.0;
        for (std::uint16_t c = 0; c < channels; ++c) {
          std::int16_t s;
          r.bytes(&s, 2);
          total += s / 32768.0;
        }
        wav.samples[i] = total / channels;
      }
      return wav;
    } else {
      std::vector<char> skip(size + (size & 1u));
      r.bytes(skip.data(), skip.size());
    }
  }
}

/// Mono 16-bit PCM writer (clips to [-1, 1]).
inline void write_wav(const std::filesystem::path& path, std::span<const double> samples, double sample_rate) {
  BinaryWriter w;
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  w.magic("RIFF");
  w.u32(36 + data_bytes);
  w.magic("WAVE");
  w.magic("fmt ");
  w.u32(16);
  const std::uint16_t pcm = 1, mono = 1, align = 2, bits = 16;
  w.bytes(&pcm, 2);
  w.bytes(&mono, 2);
  w.u32(static_cast<std::uint32_t>(sample_rate));
  w.u32(static_cast<std::uint32_t>(sample_rate) * 2);
  w.bytes(&align, 2);
  w.bytes(&bits, 2);
  w.magic("data");
  w.u32(data_bytes);
  for (const double s : samples) {
    const long scaled = std::lround(std::fmax(-1.0, std::fmin(1.0, s)) * 32768.0);
    const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768L, 32767L));
    w.bytes(&v, 2);
  }
  write_file_atomic(path, w.buffer());
}

}  // namespace damer::features
