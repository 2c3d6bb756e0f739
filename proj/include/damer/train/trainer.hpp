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
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "damer/core/checkpoint.hpp"
#include "damer/core/error.hpp"
#include "damer/core/nn.hpp"
#include "damer/core/ops.hpp"
#include "damer/core/rng.hpp"
#include "damer/core/tensor.hpp"
#include "damer/features/spectral.hpp"
#include "damer/model/dsaf.hpp"
#include "damer/pcl.hpp"
#include "damer/saml.hpp"
#include "damer/train/config.hpp"
#include "damer/train/losses.hpp"
#include "damer/train/metrics.hpp"
#include "damer/train/optim.hpp"

namespace damer::train {

/// In-memory split: feature pairs with binary labels. `labelled` may be left
/// empty; semi mode then hides `unlabelled_fraction` of each class.
struct Dataset {
  std::vector<std::string> ids;
  std::vector<features::FeaturePair> pairs;
  std::vector<int> labels;
  std::vector<std::uint8_t> labelled;

  std::size_t size() const { return pairs.size(); }

  void validate() const {
    if (pairs.empty()) fail(ErrorKind::kEmptySplit, "dataset is empty");
    if (labels.size() != pairs.size()) fail(ErrorKind::kDataError, "dataset labels and features differ in length");
    if (!ids.empty() && ids.size() != pairs.size()) fail(ErrorKind::kDataError, "dataset ids and features differ");
    if (!labelled.empty() && labelled.size() != pairs.size()) fail(ErrorKind::kDataError, "labelled mask length");
    for (const int y : labels) {
      if (y != 0 && y != 1) fail(ErrorKind::kDataError, "labels must be 0 or 1");
    }
    const auto& first = pairs.front();
    for (const auto& p : pairs) {
      if (p.mel.rows != first.mel.rows || p.mel.frames != first.mel.frames || p.coch.rows != first.coch.rows ||
          p.coch.frames != first.coch.frames) {
        fail(ErrorKind::kDataError, "feature shapes differ across the dataset");
      }
    }
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double tau = 0.0;
  double theta = 0.0;
  double loss_total = 0.0;
  double loss_cls = 0.0;
  double loss_pl = 0.0;
  double loss_cons = 0.0;
  double loss_cont = 0.0;
  double mask_ratio = 0.0;
  double mean_reliability = 0.0;
  double mean_confidence = 0.0;
  double queue_entropy = 0.0;
  std::vector<double> queue_coverage;
  double train_acc = 0.0;
  std::size_t queue_valid = 0;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"lr", r.lr},
          {"tau", r.tau},
          {"theta", r.theta},
          {"loss_total", r.loss_total},
          {"loss_cls", r.loss_cls},
          {"loss_pl", r.loss_pl},
          {"loss_cons", r.loss_cons},
          {"loss_cont", r.loss_cont},
          {"mask_ratio", r.mask_ratio},
          {"mean_reliability", r.mean_reliability},
          {"mean_confidence", r.mean_confidence},
          {"queue_entropy", r.queue_entropy},
          {"queue_coverage", r.queue_coverage},
          {"train_acc", r.train_acc},
          {"queue_valid", r.queue_valid}};
}

inline EpochRecord epoch_record_from_json(const nlohmann::json& j) {
  EpochRecord r;
  try {
    r.epoch = j.at("epoch").get<std::size_t>();
    r.lr = j.at("lr").get<double>();
    r.tau = j.at("tau").get<double>();
    r.theta = j.at("theta").get<double>();
    r.loss_total = j.at("loss_total").get<double>();
    r.loss_cls = j.at("loss_cls").get<double>();
    r.loss_pl = j.at("loss_pl").get<double>();
    r.loss_cons = j.at("loss_cons").get<double>();
    r.loss_cont = j.at("loss_cont").get<double>();
    r.mask_ratio = j.at("mask_ratio").get<double>();
    r.mean_reliability = j.at("mean_reliability").get<double>();
    r.mean_confidence = j.at("mean_confidence").get<double>();
    r.queue_entropy = j.at("queue_entropy").get<double>();
    r.queue_coverage = j.at("queue_coverage").get<std::vector<double>>();
    r.train_acc = j.at("train_acc").get<double>();
    r.queue_valid = j.value("queue_valid", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kDataError, std::string("bad epoch record: ") + e.what());
  }
  return r;
}

struct StepInfo {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double loss = 0.0;
  double grad_norm = 0.0;     // before clipping
  double clipped_norm = 0.0;  // after clipping
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const StepInfo&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> epochs;
};

/// Per-row mean and 1/std over every sample and frame, laid out as
/// [means..., inv_stds...].
inline std::vector<float> band_statistics(const std::vector<const features::Gram*>& grams) {
  const std::size_t rows = grams.front()->rows;
  std::vector<double> sum(rows, 0.0), sq(rows, 0.0);
  std::size_t count = 0;
  for (const auto* g : grams) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t t = 0; t < g->frames; ++t) {
        const double v = g->values[r * g->frames + t];
        sum[r] += v;
        sq[r] += v * v;
      }
    }
    count += g->frames;
  }
  std::vector<float> stats(2 * rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double m = sum[r] / static_cast<double>(count);
    const double var = std::max(0.0, sq[r] / static_cast<double>(count) - m * m);
    stats[r] = static_cast<float>(m);
    stats[rows + r] = static_cast<float>(1.0 / std::max(std::sqrt(var), 1e-6));
  }
  return stats;
}

/// Deterministically hides floor(fraction * n_c) samples of each class.
inline std::vector<std::uint8_t> semi_mask(const std::vector<int>& labels, double fraction, std::uint64_t seed) {
  std::vector<std::uint8_t> mask(labels.size(), 1);
  Rng rng(seed ^ 0x5e111ab5e1ull);
  for (int c = 0; c <= 1; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) idx.push_back(i);
    }
    rng.shuffle(idx);
    const auto hide = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < hide; ++k) mask[idx[k]] = 0;
  }
  return mask;
}

namespace detail {

inline NamedArray stats_array(const std::string& name, const std::vector<float>& stats) {
  return {name, {stats.size()}, stats};
}

template <typename T>
std::vector<T> row_values(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  const std::size_t d = x.dims().back();
  std::vector<T> out;
  out.reserve(rows.size() * d);
  for (const auto r : rows) out.insert(out.end(), x.data().begin() + r * d, x.data().begin() + (r + 1) * d);
  return out;
}

}  // namespace detail

/// The training procedure: per epoch compute (tau, theta, lr); per batch run
/// both views through the encoder, score cross-view agreement, select
/// pseudo-labels, build the weighted objective, back-propagate, clip, step
/// the optimiser and enqueue the detached fused features.
inline TrainResult run_training(const TrainConfig& cfg, const Dataset& data, const TrainHooks& hooks = {}) {
  cfg.validate();
  data.validate();
  const std::size_t n = data.size();
  const Mode mode = cfg.run_mode();
  const auto& shape = data.pairs.front();
  const model::ModelConfig mcfg = cfg.model_config(shape.mel.rows, shape.coch.rows, shape.mel.frames);
  if (shape.coch.frames != shape.mel.frames) fail(ErrorKind::kDataError, "mel and coch frame counts differ");

  std::vector<std::uint8_t> labelled = data.labelled;
  if (labelled.empty()) {
    labelled = mode == Mode::kSemi ? semi_mask(data.labels, cfg.unlabelled_fraction, cfg.seed)
                                   : std::vector<std::uint8_t>(n, 1);
  }

  std::vector<float> mel_stats, coch_stats;
  if (cfg.standardize_inputs) {
    std::vector<const features::Gram*> mels, cochs;
    for (const auto& p : data.pairs) {
      mels.push_back(&p.mel);
      cochs.push_back(&p.coch);
    }
    mel_stats = band_statistics(mels);
    coch_stats = band_statistics(cochs);
  }

  model::DsafModel<float> net(mcfg, cfg.seed);
  AdamW<float> optim(net.parameters().entries(),
                     {cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay});
  const auto param_tensors = optim.tensors();
  saml::MemoryQueue queue(cfg.queue_size, cfg.fusion_dim, cfg.queue_momentum);
  Rng order_rng(cfg.seed ^ 0x0de5ull);
  Rng dropout_rng(cfg.seed ^ 0xd809ull);
  const ForwardContext ctx{true, cfg.dropout, &dropout_rng};

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t horizon = std::max<std::size_t>(cfg.epochs - 1, 1);

  TrainResult result;
  pcl::PclDiagnostics diag;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double tau = pcl::temperature_at(epoch, horizon, cfg.schedule);
    const double theta = pcl::threshold_at(epoch, horizon, cfg.schedule);
    const double lr = learning_rate_at(epoch, cfg.epochs, cfg.learning_rate, cfg.cosine);
    diag.reset(tau, theta);
    order_rng.shuffle(order);

    LossComponents sums;
    double total_sum = 0.0;
    std::size_t batches = 0, correct = 0, scored = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const std::size_t b = stop - start;
      std::vector<const features::FeaturePair*> pairs;
      std::vector<int> gt(b), sup(b);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t idx = order[start + i];
        pairs.push_back(&data.pairs[idx]);
        gt[i] = data.labels[idx];
        sup[i] = labelled[idx] ? data.labels[idx] : -1;
      }
      const auto views = model::make_view_batch<float>(pairs, mel_stats.empty() ? nullptr : &mel_stats,
                                                       coch_stats.empty() ? nullptr : &coch_stats);
      Tensor<float> total;
      LossComponents parts;
      std::vector<std::size_t> query_rows;
      std::vector<int> query_labels;
      model::BranchOutputs<float> out;
      try {
        out = net.forward(views, ctx);
        const auto p_mel = softmax(out.logits_mel, static_cast<float>(tau));
        const auto p_coch = softmax(out.logits_coch, static_cast<float>(tau));

        // Pseudo-label candidates: the unlabelled rows in semi mode, every row in full mode.
        auto conf = pcl::batch_confidences(p_mel, p_coch, theta);
        std::vector<pcl::SampleConfidence> candidates;
        for (std::size_t i = 0; i < b; ++i) {
          const bool candidate = mode == Mode::kFull || sup[i] < 0;
          if (!cfg.use_pcl || !candidate) conf[i].selected = false;
          if (candidate && cfg.use_pcl) candidates.push_back(conf[i]);
        }
        diag.add(candidates);

        const auto l_cls = classification_loss(out, sup);
        Tensor<float> l_pl;
        if (cfg.use_pcl) l_pl = pcl::pseudo_label_loss(conf, out.logits_fuse);
        const auto l_cons = consistency_loss(p_mel, p_coch);

        for (std::size_t i = 0; i < b; ++i) {
          if (sup[i] >= 0) {
            query_rows.push_back(i);
            query_labels.push_back(sup[i]);
          } else if (conf[i].selected) {
            query_rows.push_back(i);
            query_labels.push_back(conf[i].pseudo_label);
          }
        }
        Tensor<float> l_cont;
        if (cfg.use_saml && !query_rows.empty() && queue.valid_count() > 0 && saml::queue_covers(queue, query_labels)) {
          const auto queries = select_rows(l2_normalize_rows(out.z_fuse), query_rows);
          l_cont = saml::contrastive_loss(queries, query_labels, queue, cfg.tau_cont, cfg.contrastive_normalize);
        }
        total = total_loss(l_cls, l_pl, l_cons, l_cont, cfg.weights);
        parts.cls = l_cls.defined() ? l_cls.item() : 0.0;
        parts.pl = l_pl.defined() ? l_pl.item() : 0.0;
        parts.cons = l_cons.item();
        parts.cont = l_cont.defined() ? l_cont.item() : 0.0;

        net.parameters().zero_grad();
        backward(total);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::kNonFinite || e.kind() == ErrorKind::kNonFiniteLoss) {
          fail(ErrorKind::kNonFiniteLoss, "epoch " + std::to_string(epoch + 1) + " batch " +
                                              std::to_string(batches) + ": " + e.what());
        }
        throw;
      }

      StepInfo step{epoch + 1, batches, static_cast<double>(total.item()), 0.0, 0.0};
      step.grad_norm = clip_grad_norm(param_tensors, cfg.grad_clip);
      step.clipped_norm = global_grad_norm(param_tensors);
      optim.step(lr);
      if (hooks.on_step) hooks.on_step(step);

      if (cfg.use_saml && !query_rows.empty()) {
        const auto feats = detail::row_values(out.z_fuse, query_rows);
        saml::enqueue<float>(queue, feats, query_labels);
      }

      for (std::size_t i = 0; i < b; ++i) {
        if (sup[i] < 0) continue;
        const float* lg = out.logits_fuse.data().data() + i * 2;
        correct += static_cast<int>(lg[1] > lg[0]) == gt[i];
        ++scored;
      }
      sums.cls += parts.cls;
      sums.pl += parts.pl;
      sums.cons += parts.cons;
      sums.cont += parts.cont;
      total_sum += step.loss;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.tau = tau;
    rec.theta = theta;
    const double nb = static_cast<double>(batches);
    rec.loss_cls = sums.cls / nb;
    rec.loss_pl = sums.pl / nb;
    rec.loss_cons = sums.cons / nb;
    rec.loss_cont = sums.cont / nb;
    rec.loss_total = total_sum / nb;
    const auto summary = diag.summary();
    rec.mask_ratio = summary.mask_ratio;
    rec.mean_reliability = summary.mean_reliability;
    rec.mean_confidence = summary.mean_confidence;
    rec.queue_valid = queue.valid_count();
    if (rec.queue_valid > 0) {
      const auto qs = saml::queue_diagnostics(queue, mcfg.classes);
      rec.queue_entropy = qs.label_entropy;
      rec.queue_coverage = qs.class_coverage;
    } else {
      rec.queue_coverage.assign(mcfg.classes, 0.0);
    }
    rec.train_acc = scored ? static_cast<double>(correct) / static_cast<double>(scored) : 0.0;
    result.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }

  Checkpoint& ckpt = result.checkpoint;
  ckpt.config_text = cfg.canonical();
  ckpt.config_hash = cfg.hash();
  ckpt.parameters = net.export_parameters();
  ckpt.optimizer_step = optim.steps();
  ckpt.optimizer_state = optim.export_state();
  ckpt.extras.push_back({"model.shape", {3},
                         {static_cast<float>(mcfg.mel_bands), static_cast<float>(mcfg.coch_channels),
                          static_cast<float>(mcfg.max_tokens)}});
  if (!mel_stats.empty()) {
    ckpt.extras.push_back(detail::stats_array("input.mel_stats", mel_stats));
    ckpt.extras.push_back(detail::stats_array("input.coch_stats", coch_stats));
  }
  if (cfg.use_saml) {
    for (auto& a : saml::export_queue(queue)) ckpt.extras.push_back(std::move(a));
  }
  return result;
}

/// A network rebuilt from a checkpoint, with its input statistics.
struct TrainedModel {
  TrainConfig config;
  std::unique_ptr<model::DsafModel<float>> net;
  std::vector<float> mel_stats;
  std::vector<float> coch_stats;
};

inline TrainedModel restore_model(const Checkpoint& ckpt) {
  TrainedModel m;
  try {
    m.config = parse_train_config(ckpt.config_text);
  } catch (const Error& e) {
    fail(ErrorKind::kCheckpointMismatch, std::string("checkpoint config: ") + e.what());
  }
  if (m.config.hash() != ckpt.config_hash) fail(ErrorKind::kCheckpointMismatch, "checkpoint config hash is inconsistent");
  const auto* shape = ckpt.find_extra("model.shape");
  if (!shape || shape->values.size() != 3) fail(ErrorKind::kCheckpointMismatch, "checkpoint lacks model.shape");
  const auto mcfg = m.config.model_config(static_cast<std::size_t>(shape->values[0]),
                                          static_cast<std::size_t>(shape->values[1]),
                                          static_cast<std::size_t>(shape->values[2]));
  m.net = std::make_unique<model::DsafModel<float>>(mcfg, m.config.seed);
  m.net->import_parameters(ckpt.parameters);
  if (const auto* s = ckpt.find_extra("input.mel_stats")) m.mel_stats = s->values;
  if (const auto* s = ckpt.find_extra("input.coch_stats")) m.coch_stats = s->values;
  return m;
}

struct Predictions {
  std::vector<double> positive;  // probability of class 1
  std::vector<int> predicted;
  std::vector<float> z_fuse;     // [N x D_f]
  std::size_t fusion_dim = 0;
};

/// Inference without dropout or graph recording. Scores come from the fused
/// head, or from the mean of all three heads' probabilities with `ensemble`.
inline Predictions predict(const TrainedModel& m, const std::vector<features::FeaturePair>& pairs, bool ensemble,
                           std::size_t batch_size = 32) {
  const auto& mc = m.net->config();
  for (const auto& p : pairs) {
    if (p.mel.rows != mc.mel_bands || p.coch.rows != mc.coch_channels || p.mel.frames != p.coch.frames ||
        p.mel.frames > mc.max_tokens) {
      fail(ErrorKind::kCheckpointMismatch, "features [" + std::to_string(p.mel.rows) + ", " +
                                               std::to_string(p.coch.rows) + "] x " + std::to_string(p.mel.frames) +
                                               " frames do not fit the checkpoint model");
    }
  }
  NoGradGuard guard;
  Predictions out;
  out.fusion_dim = mc.fusion_dim;
  const ForwardContext ctx{false, 0.0, nullptr};
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    const std::size_t stop = std::min(pairs.size(), start + batch_size);
    std::vector<const features::FeaturePair*> batch;
    for (std::size_t i = start; i < stop; ++i) batch.push_back(&pairs[i]);
    const auto views = model::make_view_batch<float>(batch, m.mel_stats.empty() ? nullptr : &m.mel_stats,
                                                     m.coch_stats.empty() ? nullptr : &m.coch_stats);
    const auto res = m.net->forward(views, ctx);
    const auto p_fuse = softmax(res.logits_fuse, 1.0f);
    Tensor<float> p_mel, p_coch;
    if (ensemble) {
      p_mel = softmax(res.logits_mel, 1.0f);
      p_coch = softmax(res.logits_coch, 1.0f);
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      double p0 = p_fuse[i * 2], p1 = p_fuse[i * 2 + 1];
      if (ensemble) {
        p0 = (p0 + p_mel[i * 2] + p_coch[i * 2]) / 3.0;
        p1 = (p1 + p_mel[i * 2 + 1] + p_coch[i * 2 + 1]) / 3.0;
      }
      out.positive.push_back(p1);
      out.predicted.push_back(p1 > p0 ? 1 : 0);
    }
    out.z_fuse.insert(out.z_fuse.end(), res.z_fuse.data().begin(), res.z_fuse.data().end());
  }
  return out;
}

inline Metrics evaluate(const TrainedModel& m, const Dataset& split) {
  if (split.size() == 0) fail(ErrorKind::kEmptySplit, "evaluation split is empty");
  split.validate();
  const auto preds = predict(m, split.pairs, m.config.ensemble_eval);
  return compute_metrics(preds.positive, preds.predicted, split.labels, m.config.dimension);
}

inline Metrics evaluate(const Checkpoint& ckpt, const Dataset& split) {
  if (split.size() == 0) fail(ErrorKind::kEmptySplit, "evaluation split is empty");
  return evaluate(restore_model(ckpt), split);
}

}  // namespace damer::train
