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
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "damer/core/error.hpp"
#include "damer/core/ops.hpp"
#include "damer/core/tensor.hpp"

namespace damer::pcl {

/// Linear curriculum bounds. The threshold defaults are the experimental
/// setting (0.65 -> 0.35).
struct CurriculumSchedule {
  double tau_max = 1.5;
  double tau_min = 0.7;
  double theta_0 = 0.65;
  double theta_min = 0.35;
};

struct CurriculumState {
  std::size_t epoch = 0;
  std::size_t total = 1;
  double tau = 1.5;
  double theta = 0.65;
};

namespace detail {

inline double affine_descent(double start, double end, std::size_t t, std::size_t total) {
  if (total == 0) fail(ErrorKind::kBadEpoch, "T_total must be positive");
  if (t > total) fail(ErrorKind::kBadEpoch, "epoch " + std::to_string(t) + " beyond T_total " + std::to_string(total));
  return start - (start - end) * static_cast<double>(t) / static_cast<double>(total);
}

}  // namespace detail

/// tau_t = tau_max - (tau_max - tau_min) t / T_total
inline double temperature_at(std::size_t t, std::size_t total, const CurriculumSchedule& s = {}) {
  return detail::affine_descent(s.tau_max, s.tau_min, t, total);
}

/// theta_t = theta_0 - (theta_0 - theta_min) t / T_total
inline double threshold_at(std::size_t t, std::size_t total, const CurriculumSchedule& s = {}) {
  return detail::affine_descent(s.theta_0, s.theta_min, t, total);
}

inline CurriculumState curriculum_state(std::size_t t, std::size_t total, const CurriculumSchedule& s = {}) {
  return {t, total, temperature_at(t, total, s), threshold_at(t, total, s)};
}

inline void check_distribution(std::span<const double> p) {
  if (p.empty()) fail(ErrorKind::kNotADistribution, "empty probability vector");
  double total = 0.0;
  for (const double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) fail(ErrorKind::kNotADistribution, "negative or non-finite probability");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-6) fail(ErrorKind::kNotADistribution, "probabilities sum to " + std::to_string(total));
}

/// JS(p, q) = 0.5 KL(p || m) + 0.5 KL(q || m), m = (p + q) / 2, in nats.
inline double js_divergence(std::span<const double> p, std::span<const double> q) {
  check_distribution(p);
  check_distribution(q);
  if (p.size() != q.size()) fail(ErrorKind::kNotADistribution, "distributions differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) total += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) total += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::clamp(total, 0.0, std::log(2.0));
}

/// r = exp(-JS), in [0.5, 1].
inline double reliability(std::span<const double> p_mel, std::span<const double> p_coch) {
  return std::exp(-js_divergence(p_mel, p_coch));
}

struct SampleConfidence {
  std::vector<double> p_mel;
  std::vector<double> p_coch;
  std::vector<double> p_fuse;
  double js = 0.0;
  double r = 1.0;
  double c = 0.0;
  int pseudo_label = 0;
  bool selected = false;
};

/// p_fuse = (p_mel + p_coch) / 2, label = argmax (lowest index on ties),
/// c = r * max(p_fuse), selected iff c >= theta.
inline SampleConfidence confidence_and_pseudo_label(std::span<const double> p_mel, std::span<const double> p_coch,
                                                    double theta = std::numeric_limits<double>::infinity()) {
  SampleConfidence s;
  s.p_mel.assign(p_mel.begin(), p_mel.end());
  s.p_coch.assign(p_coch.begin(), p_coch.end());
  s.js = js_divergence(p_mel, p_coch);
  s.r = std::exp(-s.js);
  s.p_fuse.resize(p_mel.size());
  for (std::size_t i = 0; i < p_mel.size(); ++i) s.p_fuse[i] = 0.5 * (p_mel[i] + p_coch[i]);
  const auto best = std::max_element(s.p_fuse.begin(), s.p_fuse.end());  // first maximum on ties
  s.pseudo_label = static_cast<int>(best - s.p_fuse.begin());
  s.c = s.r * *best;
  s.selected = s.c >= theta;
  return s;
}

/// Per-row confidences from [B x C] probability tensors (values only; the
/// label path never carries gradients).
template <typename T>
std::vector<SampleConfidence> batch_confidences(const Tensor<T>& p_mel, const Tensor<T>& p_coch, double theta) {
  const std::size_t c = p_mel.dims().back();
  const std::size_t rows = p_mel.size() / c;
  std::vector<SampleConfidence> out;
  out.reserve(rows);
  std::vector<double> a(c), b(c);
  for (std::size_t r = 0; r < rows; ++r) {
    double sa = 0.0, sb = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      sa += (a[j] = static_cast<double>(p_mel[r * c + j]));
      sb += (b[j] = static_cast<double>(p_coch[r * c + j]));
    }
    // Renormalise away float rounding before the 1e-6 distribution check.
    for (std::size_t j = 0; j < c; ++j) {
      a[j] /= sa;
      b[j] /= sb;
    }
    out.push_back(confidence_and_pseudo_label(a, b, theta));
  }
  return out;
}

/// Reliability-weighted cross-entropy of the fused head (temperature 1)
/// against pseudo-labels, averaged over selected samples; 0 when none are.
template <typename T>
Tensor<T> pseudo_label_loss(const std::vector<SampleConfidence>& batch, const Tensor<T>& logits_fuse) {
  if (logits_fuse.rank() != 2 || logits_fuse.dim(0) != batch.size()) {
    fail(ErrorKind::kShapeMismatch, "pseudo_label_loss: logits " + shape_str(logits_fuse.dims()) +
                                        " vs " + std::to_string(batch.size()) + " confidences");
  }
  std::vector<int> labels(batch.size());
  std::vector<T> weights(batch.size(), T{0});
  std::size_t selected = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    labels[i] = batch[i].pseudo_label;
    if (batch[i].selected) {
      weights[i] = static_cast<T>(batch[i].r);
      ++selected;
    }
  }
  if (selected == 0) return Tensor<T>::scalar(T{0});
  const auto ce = nll_rows(log_softmax(logits_fuse, T{1}), labels);
  return weighted_sum(ce, weights, static_cast<T>(selected));
}

struct PclSummary {
  double mean_confidence = 0.0;
  double std_confidence = 0.0;
  double mean_reliability = 0.0;
  double std_reliability = 0.0;
  double mask_ratio = 0.0;
  double pseudo_label_strength = 0.0;
  double tau = 0.0;
  double theta = 0.0;
  std::size_t samples = 0;
};

/// Epoch accumulator behind the per-epoch diagnostics record.
class PclDiagnostics {
 public:
  void reset(double tau, double theta) {
    *this = PclDiagnostics{};
    tau_ = tau;
    theta_ = theta;
  }

  void add(const SampleConfidence& s) {
    ++total_;
    sum_c_ += s.c;
    sum_c2_ += s.c * s.c;
    sum_r_ += s.r;
    sum_r2_ += s.r * s.r;
    if (s.selected) {
      ++selected_;
      strength_ += *std::max_element(s.p_fuse.begin(), s.p_fuse.end());
    }
  }

  void add(const std::vector<SampleConfidence>& batch) {
    for (const auto& s : batch) add(s);
  }

  PclSummary summary() const {
    PclSummary out;
    out.tau = tau_;
    out.theta = theta_;
    out.samples = total_;
    if (total_ == 0) return out;
    const double n = static_cast<double>(total_);
    out.mean_confidence = sum_c_ / n;
    out.std_confidence = std::sqrt(std::max(0.0, sum_c2_ / n - out.mean_confidence * out.mean_confidence));
    out.mean_reliability = sum_r_ / n;
    out.std_reliability = std::sqrt(std::max(0.0, sum_r2_ / n - out.mean_reliability * out.mean_reliability));
    out.mask_ratio = static_cast<double>(selected_) / n;
    out.pseudo_label_strength = selected_ ? strength_ / static_cast<double>(selected_) : 0.0;
    return out;
  }

 private:
  double tau_ = 0.0;
  double theta_ = 0.0;
  std::size_t total_ = 0;
  std::size_t selected_ = 0;
  double sum_c_ = 0.0, sum_c2_ = 0.0, sum_r_ = 0.0, sum_r2_ = 0.0, strength_ = 0.0;
};

}  // namespace damer::pcl
