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
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "damer/core/error.hpp"
#include "damer/core/io.hpp"
#include "damer/core/rng.hpp"
#include "damer/features/spectral.hpp"

namespace damer::data {

struct TrackRecord {
  std::string track_id;
  double valence = 0.0;
  double arousal = 0.0;
  std::filesystem::path feature_path;  // DMRF cache
};

enum class Dimension { kArousal, kValence };

inline Dimension parse_dimension(const std::string& text) {
  if (text == "arousal") return Dimension::kArousal;
  if (text == "valence") return Dimension::kValence;
  fail(ErrorKind::kConfigError, "dimension must be arousal or valence, got '" + text + "'");
}

inline const char* to_string(Dimension d) { return d == Dimension::kArousal ? "arousal" : "valence"; }

/// > 0 is the positive class; zero falls on the negative side.
inline int binarize_label(double value) { return value > 0.0 ? 1 : 0; }

inline int label_of(const TrackRecord& r, Dimension d) {
  return binarize_label(d == Dimension::kArousal ? r.arousal : r.valence);
}

namespace detail {

inline double parse_number(const std::string& text, std::size_t line_no, const char* what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || !std::isfinite(v)) {
    fail(ErrorKind::kDataError, "line " + std::to_string(line_no) + ": bad " + what + " '" + text + "'");
  }
  return v;
}

// Circular V-A space: intensity is the distance from the origin.
inline void check_va(double valence, double arousal, std::size_t line_no) {
  if (std::hypot(valence, arousal) > 1.0 + 1e-9) {
    fail(ErrorKind::kDataError, "line " + std::to_string(line_no) + ": V-A point outside the unit circle");
  }
}

/// Comma-separated fields of each data line; skips blanks, '#' comments and
/// a leading header whose first field is "id".
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> csv_rows(const std::string& text) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (rows.empty() && !fields.empty() && fields[0] == "id") continue;
    rows.emplace_back(line_no, std::move(fields));
  }
  return rows;
}

}  // namespace detail

/// Manifest: one record per line, `id,valence,arousal,path`. Blank lines and
/// lines starting with '#' are skipped, as is a leading `id,...` header.
/// Relative paths resolve against the manifest's directory.
inline std::vector<TrackRecord> parse_manifest(const std::string& text, const std::filesystem::path& base = {}) {
  std::vector<TrackRecord> records;
  for (const auto& [line_no, fields] : detail::csv_rows(text)) {
    if (fields.size() != 4) {
      fail(ErrorKind::kDataError, "manifest line " + std::to_string(line_no) + ": expected 4 fields");
    }
    TrackRecord r;
    r.track_id = fields[0];
    r.valence = detail::parse_number(fields[1], line_no, "valence");
    r.arousal = detail::parse_number(fields[2], line_no, "arousal");
    detail::check_va(r.valence, r.arousal, line_no);
    const std::filesystem::path p(fields[3]);
    r.feature_path = p.is_relative() && !base.empty() ? base / p : p;
    records.push_back(std::move(r));
  }
  return records;
}

struct VaPoint {
  double valence = 0.0;
  double arousal = 0.0;
};

/// `id,valence,arousal` rows, as shipped next to raw audio.
inline std::map<std::string, VaPoint> parse_label_table(const std::string& text) {
  std::map<std::string, VaPoint> out;
  for (const auto& [line_no, fields] : detail::csv_rows(text)) {
    if (fields.size() != 3) fail(ErrorKind::kDataError, "label line " + std::to_string(line_no) + ": expected 3 fields");
    const VaPoint p{detail::parse_number(fields[1], line_no, "valence"),
                    detail::parse_number(fields[2], line_no, "arousal")};
    detail::check_va(p.valence, p.arousal, line_no);
    out[fields[0]] = p;
  }
  return out;
}

inline std::vector<TrackRecord> load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::kDataError, "missing manifest " + path.string());
  return parse_manifest(read_file_text(path), path.parent_path());
}

inline std::string format_manifest(const std::vector<TrackRecord>& records, const std::filesystem::path& base = {}) {
  std::ostringstream out;
  out.precision(17);
  out << "id,valence,arousal,path\n";
  for (const auto& r : records) {
    const auto p = base.empty() ? r.feature_path : r.feature_path.lexically_relative(base);
    out << r.track_id << ',' << r.valence << ',' << r.arousal << ',' << p.generic_string() << '\n';
  }
  return out.str();
}

struct SplitManifest {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  Dimension dimension = Dimension::kArousal;
  std::uint64_t seed = 0;
  double train_fraction = 0.7;

  std::string to_text() const {
    std::ostringstream out;
    out.precision(17);
    out << "dimension=" << to_string(dimension) << "\nseed=" << seed << "\ntrain_fraction=" << train_fraction << '\n';
    for (const auto& id : train_ids) out << "train," << id << '\n';
    for (const auto& id : test_ids) out << "test," << id << '\n';
    return out.str();
  }
};

/// Per-class seeded shuffle; round(train_fraction * n_c) of each class goes
/// to train, so class ratios hold within one sample per class.
inline SplitManifest stratified_split(const std::vector<TrackRecord>& records, Dimension dimension,
                                      double train_fraction = 0.7, std::uint64_t seed = 0) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) by_class[label_of(records[i], dimension)].push_back(i);
  for (const int c : {0, 1}) {
    if (by_class[c].size() < 2) {
      fail(ErrorKind::kClassTooSmall,
           "class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) + " records, need >= 2");
    }
  }
  SplitManifest split;
  split.dimension = dimension;
  split.seed = seed;
  split.train_fraction = train_fraction;
  Rng rng(seed);
  for (auto& [label, members] : by_class) {
    rng.shuffle(members);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(members.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    for (std::size_t k = 0; k < members.size(); ++k) {
      (k < n_train ? split.train_ids : split.test_ids).push_back(records[members[k]].track_id);
    }
  }
  return split;
}

/// Records whose ids appear in `ids`, in `ids` order.
inline std::vector<TrackRecord> select_records(const std::vector<TrackRecord>& records,
                                               const std::vector<std::string>& ids) {
  std::map<std::string, const TrackRecord*> index;
  for (const auto& r : records) index[r.track_id] = &r;
  std::vector<TrackRecord> out;
  for (const auto& id : ids) {
    const auto it = index.find(id);
    if (it == index.end()) fail(ErrorKind::kDataError, "unknown track id " + id);
    out.push_back(*it->second);
  }
  return out;
}

struct ConsistencyResult {
  double mean_distance = 0.0;
  bool pass = false;
};

/// Mean Euclidean distance between duplicate annotations; passes when it
/// does not exceed `limit`.
inline ConsistencyResult annotation_consistency(const std::vector<std::pair<VaPoint, VaPoint>>& pairs,
                                                double limit = 0.25) {
  if (pairs.empty()) fail(ErrorKind::kNoPairs, "no duplicate annotation pairs");
  double total = 0.0;
  for (const auto& [a, b] : pairs) total += std::hypot(a.valence - b.valence, a.arousal - b.arousal);
  ConsistencyResult out;
  out.mean_distance = total / static_cast<double>(pairs.size());
  out.pass = out.mean_distance <= limit;
  return out;
}

struct SynthOptions {
  std::size_t n = 200;
  double separation = 6.0;
  double noise = 0.1;
  std::uint64_t seed = 0;
  std::size_t latent_dim = 8;
  std::size_t mel_bands = 128;
  std::size_t coch_channels = 84;
  std::size_t frames = 87;
};

struct SyntheticDataset {
  std::vector<TrackRecord> records;
  std::vector<features::FeaturePair> features;  // parallel to records
  std::vector<int> labels;
};

/// Two unit-variance Gaussian clusters at +-separation/2 along one latent
/// axis, rendered into both views by fixed random linear maps plus per-view
/// Gaussian noise. Labels alternate, so the set is balanced; both valence
/// and arousal carry the label sign.
inline SyntheticDataset synth_dataset(const SynthOptions& opt) {
  if (opt.n < 4) fail(ErrorKind::kConfigError, "synthetic dataset needs n >= 4");
  if (!(opt.separation > 0.0)) fail(ErrorKind::kConfigError, "separation must be positive");
  Rng rng(opt.seed);
  const std::size_t mel_size = opt.mel_bands * opt.frames, coch_size = opt.coch_channels * opt.frames;
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(opt.latent_dim));
  std::vector<double> mel_map(mel_size * opt.latent_dim), coch_map(coch_size * opt.latent_dim);
  for (auto& v : mel_map) v = rng.normal() * map_scale;
  for (auto& v : coch_map) v = rng.normal() * map_scale;

  SyntheticDataset ds;
  std::vector<double> z(opt.latent_dim);
  for (std::size_t i = 0; i < opt.n; ++i) {
    const int label = static_cast<int>(i % 2);
    for (auto& v : z) v = rng.normal();
    z[0] += (label ? 0.5 : -0.5) * opt.separation;
    auto render = [&](const std::vector<double>& map, std::size_t rows) {
      features::Gram g{rows, opt.frames, std::vector<float>(rows * opt.frames)};
      for (std::size_t e = 0; e < g.values.size(); ++e) {
        double v = 0.0;
        for (std::size_t k = 0; k < opt.latent_dim; ++k) v += map[e * opt.latent_dim + k] * z[k];
        g.values[e] = static_cast<float>(v + opt.noise * rng.normal());
      }
      return g;
    };
    features::FeaturePair pair{render(mel_map, opt.mel_bands), render(coch_map, opt.coch_channels)};
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04zu", i);
    const double va = label ? 0.5 : -0.5;
    ds.records.push_back({id, va, va, std::string(id) + ".dmrf"});
    ds.features.push_back(std::move(pair));
    ds.labels.push_back(label);
  }
  return ds;
}

}  // namespace damer::data
