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

#include <cstdio>
#include <optional>
#include <ostream>
#include <string>

#include <CLI11.hpp>

#include "damer/cli/commands.hpp"

namespace damer::cli {

/// Parses `argv` and runs one subcommand. Normal output goes to `out`,
/// diagnostics to `err`; the return value is the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-view music emotion recognition: features, training, evaluation and diagnostics", "damer"};
  app.require_subcommand(1);
  bool json = false;
  auto json_flag = [&](CLI::App* sub) { sub->add_flag("--json", json, "Machine-readable output"); };
  RunOverrides overrides;
  std::string dimension;
  std::optional<std::size_t> seed;
  auto override_flags = [&](CLI::App* sub, bool with_toggles) {
    sub->add_option("--dimension", dimension, "Label dimension")->check(CLI::IsMember({"arousal", "valence"}));
    if (!with_toggles) return;
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_flag("--no-dsaf", overrides.no_dsaf, "Encode the two views independently");
    sub->add_flag("--no-pcl", overrides.no_pcl, "Disable pseudo-label supervision");
    sub->add_flag("--no-saml", overrides.no_saml, "Disable the contrastive memory");
  };

  std::string in_dir, out_path, config_path, manifest, checkpoint, split, log_path, labels;
  data::SynthOptions synth;

  auto* extract = app.add_subcommand("extract-features", "Compute Mel and cochleagram caches for a WAV folder");
  extract->add_option("--in", in_dir, "Folder of 44.1 kHz 16-bit WAV files")->required();
  extract->add_option("--out", out_path, "Cache directory")->required();
  extract->add_option("--config", config_path, "Feature config (key = value)");
  extract->add_option("--labels", labels, "id,valence,arousal table; writes manifest.csv when given");
  json_flag(extract);

  auto* train_cmd = app.add_subcommand("train", "Train on the train side of a stratified split");
  train_cmd->add_option("--config", config_path, "Run config (key = value)")->required();
  train_cmd->add_option("--manifest", manifest, "Track manifest")->required();
  train_cmd->add_option("--out", out_path, "Output directory")->required();
  override_flags(train_cmd, true);
  json_flag(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on one side of its split");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--manifest", manifest, "Track manifest")->required();
  split = "test";
  eval_cmd->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  eval_cmd->add_option("--config", config_path, "Run config that must match the checkpoint");
  override_flags(eval_cmd, true);
  json_flag(eval_cmd);

  auto* diagnose = app.add_subcommand("diagnose", "Turn an epoch log into a plotting CSV");
  diagnose->add_option("--log", log_path, "Epoch log (JSON lines)")->required();
  diagnose->add_option("--out", out_path, "CSV path (stdout when absent)");
  json_flag(diagnose);

  auto* export_cmd = app.add_subcommand("export-embeddings", "Write fused features per track as CSV");
  export_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  export_cmd->add_option("--manifest", manifest, "Track manifest")->required();
  export_cmd->add_option("--out", out_path, "CSV path")->required();
  std::string export_split = "all";
  export_cmd->add_option("--split", export_split, "all, train or test")
      ->check(CLI::IsMember({"all", "train", "test"}));
  override_flags(export_cmd, false);
  json_flag(export_cmd);

  auto* synth_cmd = app.add_subcommand("synth-data", "Write a synthetic two-class cache set and manifest");
  synth_cmd->add_option("--out", out_path, "Output directory")->required();
  synth_cmd->add_option("--n", synth.n, "Track count")->capture_default_str();
  synth_cmd->add_option("--separation", synth.separation, "Class distance in latent units")->capture_default_str();
  synth_cmd->add_option("--noise", synth.noise, "Per-view noise standard deviation")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  synth_cmd->add_option("--mel-bands", synth.mel_bands)->capture_default_str();
  synth_cmd->add_option("--coch-channels", synth.coch_channels)->capture_default_str();
  synth_cmd->add_option("--frames", synth.frames)->capture_default_str();
  json_flag(synth_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (!dimension.empty()) overrides.dimension = dimension;
  overrides.seed = seed;
  auto opt_path = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<fs::path>(s); };

  std::string command;
  CommandResult result;
  if (extract->parsed()) {
    command = "extract-features";
    result = run_extract_features(in_dir, out_path, opt_path(config_path), opt_path(labels));
  } else if (train_cmd->parsed()) {
    command = "train";
    std::function<void(const train::EpochRecord&)> progress;
    if (!json) {
      progress = [&](const train::EpochRecord& r) {
        char line[160];
        std::snprintf(line, sizeof line, "epoch %zu  lr %.3g  loss %.4f  mask %.2f  train_acc %.3f", r.epoch, r.lr,
                      r.loss_total, r.mask_ratio, r.train_acc);
        out << line << '\n' << std::flush;
      };
    }
    result = run_train(config_path, manifest, out_path, overrides, progress);
  } else if (eval_cmd->parsed()) {
    command = "eval";
    result = run_eval(checkpoint, manifest, split, opt_path(config_path), overrides);
  } else if (diagnose->parsed()) {
    command = "diagnose";
    result = run_diagnose(log_path, opt_path(out_path));
  } else if (export_cmd->parsed()) {
    command = "export-embeddings";
    result = run_export_embeddings(checkpoint, manifest, out_path, export_split, overrides);
  } else {
    command = "synth-data";
    result = run_synth_data(out_path, synth);
  }

  if (json) {
    nlohmann::json doc = result.details;
    doc["command"] = command;
    doc["exit_code"] = result.exit_code;
    if (result.exit_code != kExitOk) doc["error"] = result.summary;
    out << doc.dump() << '\n';
  } else if (result.exit_code == kExitOk) {
    out << result.summary << '\n';
  }
  if (result.exit_code != kExitOk) err << "damer " << command << ": " << result.summary << '\n';
  return result.exit_code;
}

}  // namespace damer::cli
