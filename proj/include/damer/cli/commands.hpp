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
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "damer/core/checkpoint.hpp"
#include "damer/core/error.hpp"
#include "damer/core/io.hpp"
#include "damer/data/datakit.hpp"
#include "damer/features/audio.hpp"
#include "damer/features/cache.hpp"
#include "damer/features/spectral.hpp"
#include "damer/model/dsaf.hpp"
#include "damer/train/trainer.hpp"

namespace damer::cli {

namespace fs = std::filesystem;

/// Stable process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNonFinite = 4,
  kExitMismatch = 5,
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfigError:
    case ErrorKind::kHeadDivisibility:
    case ErrorKind::kBadTemperature:
    case ErrorKind::kBadEpoch:
      return kExitConfig;
    case ErrorKind::kNonFinite:
    case ErrorKind::kNonFiniteLoss:
      return kExitNonFinite;
    case ErrorKind::kCheckpointMismatch:
      return kExitMismatch;
    default:
      return kExitData;
  }
}

struct CommandResult {
  int exit_code = kExitOk;
  std::string summary;
  nlohmann::json details = nlohmann::json::object();
};

/// Runs `body`, turning library errors into their exit codes.
inline CommandResult guarded(const std::function<CommandResult()>& body) {
  try {
    return body();
  } catch (const Error& e) {
    return {exit_code_for(e.kind()), e.what(), {}};
  } catch (const fs::filesystem_error& e) {
    return {kExitData, std::string("IoError: ") + e.what(), {}};
  }
}

/// Command-line adjustments applied on top of a run config.
struct RunOverrides {
  std::optional<std::string> dimension;
  std::optional<std::size_t> seed;
  bool no_dsaf = false;
  bool no_pcl = false;
  bool no_saml = false;

  void apply(train::TrainConfig& cfg) const {
    if (dimension) cfg.dimension = *dimension;
    if (seed) cfg.seed = *seed;
    if (no_dsaf) cfg.use_dsaf = false;
    if (no_pcl) cfg.use_pcl = false;
    if (no_saml) cfg.use_saml = false;
    cfg.validate();
  }
};

inline const fs::path kCheckpointFile = "checkpoint.dmrc";
inline const fs::path kEpochLogFile = "epochs.jsonl";
inline const fs::path kSplitFile = "split.txt";
inline const fs::path kMetricsFile = "metrics.json";
inline const fs::path kManifestFile = "manifest.csv";

/// Loads the feature caches behind `records`, labelled on `dimension`.
inline train::Dataset load_dataset(const std::vector<data::TrackRecord>& records, data::Dimension dimension) {
  train::Dataset d;
  for (const auto& r : records) {
    d.ids.push_back(r.track_id);
    d.pairs.push_back(features::load_feature_cache(r.feature_path));
    d.labels.push_back(data::label_of(r, dimension));
  }
  return d;
}

inline nlohmann::json metrics_json(const train::Metrics& m) {
  return {{"dimension", m.dimension}, {"acc", m.acc}, {"f1", m.f1}, {"auc", m.auc}, {"samples", m.samples}};
}

inline std::string metrics_line(const std::string& label, const train::Metrics& m) {
  std::ostringstream out;
  out.precision(4);
  out << std::fixed << label << ' ' << m.dimension << ": acc " << m.acc << "  f1 " << m.f1 << "  auc " << m.auc
      << "  (n = " << m.samples << ")";
  return out.str();
}

// ---- extract-features ----

/// Every `*.wav` in `in_dir` becomes `<out_dir>/<stem>.dmrf` plus a JSON
/// sidecar. With a label table, a manifest over the new caches is written too.
inline CommandResult run_extract_features(const fs::path& in_dir, const fs::path& out_dir,
                                          const std::optional<fs::path>& config_path,
                                          const std::optional<fs::path>& labels_path = std::nullopt) {
  return guarded([&] {
    features::FeatureConfig cfg;
    if (config_path) {
      if (!fs::exists(*config_path)) fail(ErrorKind::kConfigError, "missing config file " + config_path->string());
      cfg = features::parse_feature_config(read_file_text(*config_path));
    }
    cfg.validate();
    if (!fs::is_directory(in_dir)) fail(ErrorKind::kDataError, "input directory " + in_dir.string() + " not found");
    std::vector<fs::path> wavs;
    for (const auto& entry : fs::directory_iterator(in_dir)) {
      auto ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (entry.is_regular_file() && ext == ".wav") wavs.push_back(entry.path());
    }
    std::sort(wavs.begin(), wavs.end());
    if (wavs.empty()) fail(ErrorKind::kDataError, "no .wav files in " + in_dir.string());

    std::optional<std::map<std::string, data::VaPoint>> labels;
    if (labels_path) {
      if (!fs::exists(*labels_path)) fail(ErrorKind::kDataError, "missing label table " + labels_path->string());
      labels = data::parse_label_table(read_file_text(*labels_path));
    }

    std::vector<data::TrackRecord> records;
    for (const auto& wav : wavs) {
      const std::string id = wav.stem().string();
      const auto audio = features::read_wav(wav);
      features::FeaturePair pair;
      try {
        pair = features::extract_features(features::select_segment(audio.samples, audio.sample_rate, cfg), cfg);
      } catch (const Error& e) {
        fail(e.kind(), wav.filename().string() + ": " + e.what());
      }
      const fs::path cache = out_dir / (id + ".dmrf");
      features::save_feature_cache(cache, pair);
      write_file_atomic(out_dir / (id + ".json"), features::cache_sidecar(id, cfg.hash(), pair).dump(2) + "\n");
      if (labels) {
        const auto it = labels->find(id);
        if (it == labels->end()) fail(ErrorKind::kDataError, "no labels for track " + id);
        records.push_back({id, it->second.valence, it->second.arousal, cache});
      }
    }
    if (labels) write_file_atomic(out_dir / kManifestFile, data::format_manifest(records, out_dir));
    CommandResult r;
    r.summary = "extracted " + std::to_string(wavs.size()) + " tracks into " + out_dir.string();
    r.details = {{"tracks", wavs.size()}, {"config_hash", hex64(cfg.hash())}, {"out", out_dir.string()}};
    return r;
  });
}

// ---- synth-data ----

/// Writes a synthetic cache set and its manifest.
inline CommandResult run_synth_data(const fs::path& out_dir, const data::SynthOptions& opt) {
  return guarded([&] {
    auto ds = data::synth_dataset(opt);
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      ds.records[i].feature_path = out_dir / ds.records[i].feature_path;
      features::save_feature_cache(ds.records[i].feature_path, ds.features[i]);
    }
    write_file_atomic(out_dir / kManifestFile, data::format_manifest(ds.records, out_dir));
    CommandResult r;
    r.summary = "wrote " + std::to_string(ds.records.size()) + " synthetic tracks to " + out_dir.string();
    r.details = {{"tracks", ds.records.size()}, {"manifest", (out_dir / kManifestFile).string()}};
    return r;
  });
}

// ---- train ----

inline std::string epoch_log_text(const std::vector<train::EpochRecord>& epochs) {
  std::string text;
  for (const auto& e : epochs) text += train::to_json(e).dump() + "\n";
  return text;
}

/// Splits the manifest, trains on the train part and writes the checkpoint,
/// epoch log, split manifest and train/test metrics into `out_dir`.
inline CommandResult run_train(const fs::path& config_path, const fs::path& manifest_path, const fs::path& out_dir,
                               const RunOverrides& overrides = {},
                               const std::function<void(const train::EpochRecord&)>& on_epoch = {}) {
  return guarded([&] {
    auto cfg = train::load_train_config(config_path);
    overrides.apply(cfg);
    const auto dimension = data::parse_dimension(cfg.dimension);
    const auto records = data::load_manifest(manifest_path);
    const auto split = data::stratified_split(records, dimension, cfg.train_fraction, cfg.seed);
    const auto train_set = load_dataset(data::select_records(records, split.train_ids), dimension);
    const auto test_set = load_dataset(data::select_records(records, split.test_ids), dimension);

    std::vector<train::EpochRecord> logged;
    train::TrainHooks hooks;
    hooks.on_epoch = [&](const train::EpochRecord& rec) {
      logged.push_back(rec);
      write_file_atomic(out_dir / kEpochLogFile, epoch_log_text(logged));
      if (on_epoch) on_epoch(rec);
    };
    const auto result = train::run_training(cfg, train_set, hooks);
    save_checkpoint(out_dir / kCheckpointFile, result.checkpoint);
    write_file_atomic(out_dir / kSplitFile, split.to_text());

    const auto model = train::restore_model(result.checkpoint);
    const auto train_metrics = train::evaluate(model, train_set);
    const auto test_metrics = train::evaluate(model, test_set);
    const nlohmann::json metrics = {{"train", metrics_json(train_metrics)}, {"test", metrics_json(test_metrics)}};
    write_file_atomic(out_dir / kMetricsFile, metrics.dump(2) + "\n");

    CommandResult r;
    r.summary = "trained " + std::to_string(cfg.epochs) + " epochs on " + std::to_string(train_set.size()) +
                " tracks\n" + metrics_line("train", train_metrics) + "\n" + metrics_line("test", test_metrics);
    r.details = {{"epochs", cfg.epochs},
                 {"config_hash", hex64(cfg.hash())},
                 {"checkpoint", (out_dir / kCheckpointFile).string()},
                 {"metrics", metrics}};
    return r;
  });
}

// ---- eval ----

/// Rebuilds the checkpoint's split of `manifest` and scores one side of it.
/// When `config_path` is given, its hash (after overrides) must match the
/// checkpoint's.
inline CommandResult run_eval(const fs::path& checkpoint_path, const fs::path& manifest_path,
                              const std::string& split_name, const std::optional<fs::path>& config_path = std::nullopt,
                              const RunOverrides& overrides = {}) {
  return guarded([&] {
    if (split_name != "train" && split_name != "test") {
      fail(ErrorKind::kConfigError, "split must be train or test, got '" + split_name + "'");
    }
    const auto ckpt = load_checkpoint(checkpoint_path);
    if (config_path) {
      auto cfg = train::load_train_config(*config_path);
      overrides.apply(cfg);
      if (cfg.hash() != ckpt.config_hash) {
        fail(ErrorKind::kCheckpointMismatch, "config hash " + hex64(cfg.hash()) + " differs from checkpoint " +
                                                 hex64(ckpt.config_hash));
      }
    }
    const auto model = train::restore_model(ckpt);
    const auto dimension = data::parse_dimension(overrides.dimension.value_or(model.config.dimension));
    const auto records = data::load_manifest(manifest_path);
    const auto split = data::stratified_split(records, dimension, model.config.train_fraction, model.config.seed);
    auto metrics = train::evaluate(
        model, load_dataset(data::select_records(records, split_name == "train" ? split.train_ids : split.test_ids),
                            dimension));
    metrics.dimension = data::to_string(dimension);
    CommandResult r;
    r.summary = metrics_line(split_name, metrics);
    r.details = metrics_json(metrics);
    r.details["split"] = split_name;
    return r;
  });
}

// ---- diagnose ----

inline const std::vector<std::string> kDiagnoseColumns = {
    "epoch", "tau", "theta", "mask_ratio", "mean_confidence", "mean_reliability", "queue_entropy",
    "coverage_0", "coverage_1"};

/// Epoch log (one JSON object per line) to a plotting CSV.
inline std::string diagnostics_csv(const std::string& log_text) {
  std::ostringstream out;
  out.precision(10);
  for (std::size_t i = 0; i < kDiagnoseColumns.size(); ++i) out << (i ? "," : "") << kDiagnoseColumns[i];
  out << '\n';
  std::istringstream in(log_text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    train::EpochRecord r;
    try {
      r = train::epoch_record_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kDataError, "epoch log line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      fail(ErrorKind::kDataError, "epoch log line " + std::to_string(line_no) + ": " + e.what());
    }
    const double c0 = r.queue_coverage.size() > 0 ? r.queue_coverage[0] : 0.0;
    const double c1 = r.queue_coverage.size() > 1 ? r.queue_coverage[1] : 0.0;
    out << r.epoch << ',' << r.tau << ',' << r.theta << ',' << r.mask_ratio << ',' << r.mean_confidence << ','
        << r.mean_reliability << ',' << r.queue_entropy << ',' << c0 << ',' << c1 << '\n';
  }
  return out.str();
}

/// Writes the CSV to `out_path`, or returns it in the summary when absent.
inline CommandResult run_diagnose(const fs::path& log_path, const std::optional<fs::path>& out_path = std::nullopt) {
  return guarded([&] {
    if (!fs::exists(log_path)) fail(ErrorKind::kDataError, "missing epoch log " + log_path.string());
    const auto csv = diagnostics_csv(read_file_text(log_path));
    const auto rows = static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) - 1;
    CommandResult r;
    if (out_path) {
      write_file_atomic(*out_path, csv);
      r.summary = "wrote " + std::to_string(rows) + " epochs to " + out_path->string();
    } else {
      r.summary = csv.substr(0, csv.size() - 1);
    }
    r.details = {{"epochs", rows}};
    if (out_path) r.details["out"] = out_path->string();
    return r;
  });
}

// ---- export-embeddings ----

/// Fused features per track as CSV: track_id, label, f_0 .. f_{D-1}.
/// `split_name` is "all", "train" or "test".
inline CommandResult run_export_embeddings(const fs::path& checkpoint_path, const fs::path& manifest_path,
                                           const fs::path& out_path, const std::string& split_name = "all",
                                           const RunOverrides& overrides = {}) {
  return guarded([&] {
    if (split_name != "all" && split_name != "train" && split_name != "test") {
      fail(ErrorKind::kConfigError, "split must be all, train or test, got '" + split_name + "'");
    }
    const auto model = train::restore_model(load_checkpoint(checkpoint_path));
    const auto dimension = data::parse_dimension(overrides.dimension.value_or(model.config.dimension));
    auto records = data::load_manifest(manifest_path);
    if (split_name != "all") {
      const auto split = data::stratified_split(records, dimension, model.config.train_fraction, model.config.seed);
      records = data::select_records(records, split_name == "train" ? split.train_ids : split.test_ids);
    }
    const auto set = load_dataset(records, dimension);
    const auto preds = train::predict(model, set.pairs, model.config.ensemble_eval);
    const std::size_t d = preds.fusion_dim;

    std::ostringstream out;
    out.precision(9);
    out << "track_id,label";
    for (std::size_t j = 0; j < d; ++j) out << ",f_" << j;
    out << '\n';
    for (std::size_t i = 0; i < set.size(); ++i) {
      out << set.ids[i] << ',' << set.labels[i];
      for (std::size_t j = 0; j < d; ++j) out << ',' << preds.z_fuse[i * d + j];
      out << '\n';
    }
    write_file_atomic(out_path, out.str());
    CommandResult r;
    r.summary = "exported " + std::to_string(set.size()) + " x " + std::to_string(d) + " embeddings to " +
                out_path.string();
    r.details = {{"rows", set.size()}, {"columns", d + 2}, {"out", out_path.string()}};
    return r;
  });
}

}  // namespace damer::cli
