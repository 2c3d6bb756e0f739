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
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "damer/core/error.hpp"

namespace damer::train {

struct Metrics {
  std::string dimension;
  double acc = 0.0;
  double f1 = 0.0;
  double auc = 0.5;
  std::size_t samples = 0;
};

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (labels.empty()) fail(ErrorKind::kEmptySplit, "accuracy over an empty split");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// F1 of the positive class; 0 when there are no true positives.
inline double f1_score(const std::vector<int>& predicted, const std::vector<int>& labels) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    tp += predicted[i] == 1 && labels[i] == 1;
    fp += predicted[i] == 1 && labels[i] != 1;
    fn += predicted[i] != 1 && labels[i] == 1;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

/// Mann-Whitney statistic via midranks: P(score_pos > score_neg) with ties
/// counting one half. 0.5 when either class is absent.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return 0.5;
  const double np = static_cast<double>(positives);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(negatives));
}

/// Predicted class is argmax, i.e. 1 iff score > 0.5 for two classes.
inline Metrics compute_metrics(const std::vector<double>& positive_scores, const std::vector<int>& predicted,
                               const std::vector<int>& labels, std::string dimension = {}) {
  if (labels.empty()) fail(ErrorKind::kEmptySplit, "evaluation split is empty");
  if (positive_scores.size() != labels.size() || predicted.size() != labels.size()) {
    fail(ErrorKind::kShapeMismatch, "metrics: scores, predictions and labels differ in length");
  }
  Metrics m;
  m.dimension = std::move(dimension);
  m.samples = labels.size();
  m.acc = accuracy(predicted, labels);
  m.f1 = f1_score(predicted, labels);
  m.auc = roc_auc(positive_scores, labels);
  return m;
}

}  // namespace damer::train
