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
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "damer/core/error.hpp"
#include "damer/core/io.hpp"
#include "damer/core/keyvalue.hpp"
#include "damer/data/datakit.hpp"
#include "damer/model/dsaf.hpp"
#include "damer/pcl.hpp"

namespace damer::train {

enum class Mode { kSemi, kFull };

struct LossWeights {
  double lambda_cls = 1.0;
  double lambda_pl = 0.8;
  double lambda_cons = 0.2;
  double lambda_cont = 0.1;
};

/// Everything a run needs. Serialised as a flat `key = value` file; see
/// `TrainConfig::kRequiredKeys` for the keys that must be present.
struct TrainConfig {
  // optimisation
  std::size_t epochs = 80;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double grad_clip = 5.0;
  bool cosine = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t seed = 0;
  // data
  std::string dimension = "arousal";
  double train_fraction = 0.7;
  std::string mode = "full";
  double unlabelled_fraction = 0.0;
  bool standardize_inputs = true;
  // module toggles
  bool use_dsaf = true;
  bool use_pcl = true;
  bool use_saml = true;
  // objective
  LossWeights weights;
  pcl::CurriculumSchedule schedule;
  double tau_cont = 0.07;
  std::size_t queue_size = 512;
  double queue_momentum = 0.0;
  bool contrastive_normalize = false;
  // architecture
  std::size_t embed_dim = 128;
  std::size_t fusion_dim = 256;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_expansion = 4;
  double dropout = 0.1;
  bool positional = true;
  // evaluation
  bool ensemble_eval = false;

  static inline const std::vector<std::string> kRequiredKeys = {"epochs", "batch_size", "seed"};

  Mode run_mode() const { return mode == "semi" ? Mode::kSemi : Mode::kFull; }
  data::Dimension run_dimension() const { return data::parse_dimension(dimension); }

  model::ModelConfig model_config(std::size_t mel_bands, std::size_t coch_channels, std::size_t frames) const {
    model::ModelConfig m;
    m.mel_bands = mel_bands;
    m.coch_channels = coch_channels;
    m.max_tokens = frames;
    m.embed_dim = embed_dim;
    m.fusion_dim = fusion_dim;
    m.heads = heads;
    m.layers = layers;
    m.ffn_expansion = ffn_expansion;
    m.dropout = dropout;
    m.positional = positional;
    m.cross_view = use_dsaf;
    return m;
  }

  std::map<std::string, ConfigField> fields() {
    return {{"epochs", &epochs},
            {"batch_size", &batch_size},
            {"learning_rate", &learning_rate},
            {"weight_decay", &weight_decay},
            {"grad_clip", &grad_clip},
            {"cosine", &cosine},
            {"adam_beta1", &adam_beta1},
            {"adam_beta2", &adam_beta2},
            {"adam_eps", &adam_eps},
            {"seed", &seed},
            {"dimension", &dimension},
            {"train_fraction", &train_fraction},
            {"mode", &mode},
            {"unlabelled_fraction", &unlabelled_fraction},
            {"standardize_inputs", &standardize_inputs},
            {"use_dsaf", &use_dsaf},
            {"use_pcl", &use_pcl},
            {"use_saml", &use_saml},
            {"lambda_cls", &weights.lambda_cls},
            {"lambda_pl", &weights.lambda_pl},
            {"lambda_cons", &weights.lambda_cons},
            {"lambda_cont", &weights.lambda_cont},
            {"tau_max", &schedule.tau_max},
            {"tau_min", &schedule.tau_min},
            {"theta_0", &schedule.theta_0},
            {"theta_min", &schedule.theta_min},
            {"tau_cont", &tau_cont},
            {"queue_size", &queue_size},
            {"queue_momentum", &queue_momentum},
            {"contrastive_normalize", &contrastive_normalize},
            {"embed_dim", &embed_dim},
            {"fusion_dim", &fusion_dim},
            {"heads", &heads},
            {"layers", &layers},
            {"ffn_expansion", &ffn_expansion},
            {"dropout", &dropout},
            {"positional", &positional},
            {"ensemble_eval", &ensemble_eval}};
  }

  /// Sorted `key = value` lines; the config hash is taken over this text.
  std::string canonical() const {
    auto copy = *this;
    return format_key_values(copy.fields());
  }

  std::uint64_t hash() const { return fnv1a64(canonical()); }

  void validate() const {
    auto bad = [](const std::string& key, const std::string& why) { fail(ErrorKind::kConfigError, key + ": " + why); };
    if (epochs == 0) bad("epochs", "must be positive");
    if (batch_size == 0) bad("batch_size", "must be positive");
    if (!(learning_rate > 0.0)) bad("learning_rate", "must be positive");
    if (weight_decay < 0.0) bad("weight_decay", "must be non-negative");
    if (!(grad_clip > 0.0)) bad("grad_clip", "must be positive");
    if (mode != "semi" && mode != "full") bad("mode", "must be semi or full");
    if (dimension != "arousal" && dimension != "valence") bad("dimension", "must be arousal or valence");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) bad("train_fraction", "must lie in (0, 1)");
    if (unlabelled_fraction < 0.0 || unlabelled_fraction >= 1.0) bad("unlabelled_fraction", "must lie in [0, 1)");
    for (const auto& [key, v] : {std::pair{"lambda_cls", weights.lambda_cls}, {"lambda_pl", weights.lambda_pl},
                                 {"lambda_cons", weights.lambda_cons}, {"lambda_cont", weights.lambda_cont}}) {
      if (v < 0.0) bad(key, "must be non-negative");
    }
    if (!(schedule.tau_min > 0.0 && schedule.tau_max >= schedule.tau_min)) bad("tau_min", "need 0 < tau_min <= tau_max");
    if (!(schedule.theta_min <= schedule.theta_0)) bad("theta_min", "need theta_min <= theta_0");
    if (!(tau_cont > 0.0)) bad("tau_cont", "must be positive");
    if (queue_size == 0) bad("queue_size", "must be positive");
    if (use_saml && batch_size > queue_size) bad("batch_size", "must not exceed queue_size");
    if (queue_momentum < 0.0 || queue_momentum >= 1.0) bad("queue_momentum", "must lie in [0, 1)");
    if (heads == 0 || embed_dim % heads != 0) bad("heads", "must divide embed_dim");
    if (fusion_dim == 0 || layers > 64 || ffn_expansion == 0) bad("fusion_dim", "architecture sizes must be positive");
    if (dropout < 0.0 || dropout >= 1.0) bad("dropout", "must lie in [0, 1)");
  }
};

/// Parses `key = value` lines ('#' starts a comment). Unknown keys, bad
/// values and missing required keys raise ConfigError naming the key.
inline TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  const auto seen = apply_key_values(text, cfg.fields());
  for (const auto& key : TrainConfig::kRequiredKeys) {
    if (!seen.count(key)) fail(ErrorKind::kConfigError, "missing required key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::kConfigError, "missing config file " + path.string());
  return parse_train_config(read_file_text(path));
}

}  // namespace damer::train
