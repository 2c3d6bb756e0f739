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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "damer/core/checkpoint.hpp"
#include "damer/core/error.hpp"
#include "damer/core/tensor.hpp"

namespace damer::saml {

/// Fixed-capacity FIFO of unit-norm fused features and their labels.
/// Slots holding a zero feature are kept but flagged invalid.
struct MemoryQueue {
  std::size_t capacity = 512;
  std::size_t dim = 256;
  std::vector<float> keys;         // [capacity x dim]
  std::vector<int> labels;         // [capacity]
  std::vector<std::uint8_t> valid; // [capacity]
  std::size_t write_index = 0;
  // > 0 blends an overwritten valid slot: k <- normalise(m k_old + (1 - m) k_new).
  double momentum = 0.0;

  MemoryQueue() : MemoryQueue(512, 256) {}
  MemoryQueue(std::size_t capacity_, std::size_t dim_, double momentum_ = 0.0)
      : capacity(capacity_), dim(dim_), keys(capacity_ * dim_, 0.0f), labels(capacity_, -1),
        valid(capacity_, 0), momentum(momentum_) {
    if (capacity == 0 || dim == 0) fail(ErrorKind::kConfigError, "memory queue needs positive capacity and dim");
  }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (const auto v : valid) n += v;
    return n;
  }

  std::span<const float> key(std::size_t slot) const { return {keys.data() + slot * dim, dim}; }
};

/// Writes each row, L2-normalised, at consecutive slots from write_index
/// (wrapping), then advances write_index by B mod K. Features must already
/// be detached from any graph.
template <typename T>
void enqueue(MemoryQueue& queue, std::span<const T> features, const std::vector<int>& labels) {
  const std::size_t batch = labels.size();
  if (batch > queue.capacity) {
    fail(ErrorKind::kBatchTooLarge,
         "batch of " + std::to_string(batch) + " exceeds queue capacity " + std::to_string(queue.capacity));
  }
  if (features.size() != batch * queue.dim) fail(ErrorKind::kShapeMismatch, "enqueue: features vs labels");
  std::vector<double> row(queue.dim);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t slot = (queue.write_index + b) % queue.capacity;
    double sq = 0.0;
    for (std::size_t j = 0; j < queue.dim; ++j) {
      row[j] = static_cast<double>(features[b * queue.dim + j]);
      sq += row[j] * row[j];
    }
    float* dst = queue.keys.data() + slot * queue.dim;
    if (!(sq > 0.0) || !std::isfinite(sq)) {
      for (std::size_t j = 0; j < queue.dim; ++j) dst[j] = 0.0f;
      queue.valid[slot] = 0;
      queue.labels[slot] = labels[b];
      continue;
    }
    const double norm = std::sqrt(sq);
    for (auto& v : row) v /= norm;
    if (queue.momentum > 0.0 && queue.valid[slot]) {
      double bsq = 0.0;
      for (std::size_t j = 0; j < queue.dim; ++j) {
        row[j] = queue.momentum * dst[j] + (1.0 - queue.momentum) * row[j];
        bsq += row[j] * row[j];
      }
      const double bnorm = std::sqrt(bsq);
      if (bnorm > 0.0) {
        for (auto& v : row) v /= bnorm;
      }
    }
    for (std::size_t j = 0; j < queue.dim; ++j) dst[j] = static_cast<float>(row[j]);
    queue.valid[slot] = 1;
    queue.labels[slot] = labels[b];
  }
  queue.write_index = (queue.write_index + batch) % queue.capacity;
}

/// True when every class appearing in `labels` has at least one valid key.
inline bool queue_covers(const MemoryQueue& queue, const std::vector<int>& labels) {
  for (const int y : labels) {
    bool found = false;
    for (std::size_t s = 0; s < queue.capacity && !found; ++s) found = queue.valid[s] && queue.labels[s] == y;
    if (!found) return false;
  }
  return true;
}

/// Supervised InfoNCE against the queue:
///   L(q, y) = -sum_{j : y_j = y} log( exp(q.k_j / tau) / sum_k exp(q.k_k / tau) )
/// over valid slots, averaged over all N_q queries. Queries without positives
/// contribute 0; an empty queue yields 0. With `normalize` each query's sum is
/// divided by its positive count. Keys are constants.
template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& queries, const std::vector<int>& query_labels, const MemoryQueue& queue,
                           double tau_cont = 0.07, bool normalize = false) {
  if (!(tau_cont > 0.0)) fail(ErrorKind::kBadTemperature, "contrastive temperature must be positive");
  if (queries.rank() != 2 || queries.dim(1) != queue.dim || queries.dim(0) != query_labels.size()) {
    fail(ErrorKind::kShapeMismatch, "contrastive_loss: queries " + shape_str(queries.dims()));
  }
  std::vector<std::size_t> slots;
  for (std::size_t s = 0; s < queue.capacity; ++s) {
    if (queue.valid[s]) slots.push_back(s);
  }
  const std::size_t nq = queries.dim(0), d = queue.dim, nk = slots.size();
  if (nk == 0 || nq == 0) return Tensor<T>::scalar(T{0});

  const T inv_tau = static_cast<T>(1.0 / tau_cont);
  // Per query: softmax over keys and the positive count.
  auto probs = std::make_shared<std::vector<T>>(nq * nk);
  auto counts = std::make_shared<std::vector<T>>(nq, T{0});
  T total{0};
  for (std::size_t i = 0; i < nq; ++i) {
    const T* q = queries.data().data() + i * d;
    T* pr = probs->data() + i * nk;
    T peak = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < nk; ++j) {
      const float* k = queue.keys.data() + slots[j] * d;
      T s{0};
      for (std::size_t c = 0; c < d; ++c) s += q[c] * static_cast<T>(k[c]);
      pr[j] = s * inv_tau;
      peak = std::max(peak, pr[j]);
    }
    T z{0};
    for (std::size_t j = 0; j < nk; ++j) z += std::exp(pr[j] - peak);
    const T lse = peak + std::log(z);
    T term{0};
    T count{0};
    for (std::size_t j = 0; j < nk; ++j) {
      if (queue.labels[slots[j]] == query_labels[i]) {
        term -= pr[j] - lse;
        count += T{1};
      }
      pr[j] = std::exp(pr[j] - lse);
    }
    (*counts)[i] = count;
    total += (normalize && count > T{0}) ? term / count : term;
  }
  total /= static_cast<T>(nq);

  std::vector<float> key_copy;
  std::vector<int> key_labels;
  key_copy.reserve(nk * d);
  for (const auto s : slots) {
    key_copy.insert(key_copy.end(), queue.keys.begin() + static_cast<std::ptrdiff_t>(s * d),
                    queue.keys.begin() + static_cast<std::ptrdiff_t>((s + 1) * d));
    key_labels.push_back(queue.labels[s]);
  }
  Node<T>* qn = queries.node();
  return make_result<T>(
      "contrastive", {1}, {total}, {queries},
      [=, keys = std::move(key_copy), key_labels = std::move(key_labels)](const std::vector<T>& g) {
        // dL_i/dq = (w / tau) sum_k (|P| p_k - [k in P]) k_k, w = 1 or 1/|P|.
        auto& dst = qn->grad_buffer();
        const T outer = g[0] * inv_tau / static_cast<T>(nq);
        for (std::size_t i = 0; i < nq; ++i) {
          const T count = (*counts)[i];
          if (count == T{0}) continue;
          const T w = normalize ? outer / count : outer;
          const T* pr = probs->data() + i * nk;
          for (std::size_t j = 0; j < nk; ++j) {
            const T coeff = w * (count * pr[j] - (key_labels[j] == query_labels[i] ? T{1} : T{0}));
            const float* k = keys.data() + j * d;
            for (std::size_t c = 0; c < d; ++c) dst[i * d + c] += coeff * static_cast<T>(k[c]);
          }
        }
      });
}

struct QueueStats {
  double label_entropy = 0.0;                          // nats
  std::vector<double> class_coverage;                  // fraction of valid slots per class
  std::vector<std::vector<double>> centroid_distances; // per class, L2 distance of each key to its class mean
};

/// Entropy and coverage of the valid slots' labels plus per-class
/// key-to-centroid distances (centroids are not re-normalised).
inline QueueStats queue_diagnostics(const MemoryQueue& queue, std::size_t classes = 2) {
  std::vector<std::size_t> counts(classes, 0);
  std::vector<std::vector<double>> centroids(classes, std::vector<double>(queue.dim, 0.0));
  std::size_t total = 0;
  for (std::size_t s = 0; s < queue.capacity; ++s) {
    if (!queue.valid[s]) continue;
    const int y = queue.labels[s];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) fail(ErrorKind::kShapeMismatch, "queue label out of range");
    ++counts[static_cast<std::size_t>(y)];
    ++total;
    const auto k = queue.key(s);
    for (std::size_t j = 0; j < queue.dim; ++j) centroids[static_cast<std::size_t>(y)][j] += k[j];
  }
  if (total == 0) fail(ErrorKind::kEmptyQueue, "queue has no valid entries");

  QueueStats stats;
  stats.class_coverage.resize(classes);
  stats.centroid_distances.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    const double frac = static_cast<double>(counts[c]) / static_cast<double>(total);
    stats.class_coverage[c] = frac;
    if (frac > 0.0) stats.label_entropy -= frac * std::log(frac);
    if (counts[c] > 0) {
      for (auto& v : centroids[c]) v /= static_cast<double>(counts[c]);
    }
  }
  for (std::size_t s = 0; s < queue.capacity; ++s) {
    if (!queue.valid[s]) continue;
    const auto y = static_cast<std::size_t>(queue.labels[s]);
    const auto k = queue.key(s);
    double sq = 0.0;
    for (std::size_t j = 0; j < queue.dim; ++j) sq += (k[j] - centroids[y][j]) * (k[j] - centroids[y][j]);
    stats.centroid_distances[y].push_back(std::sqrt(sq));
  }
  return stats;
}

/// Queue snapshot as checkpoint extras.
inline std::vector<NamedArray> export_queue(const MemoryQueue& queue) {
  NamedArray keys{"queue.keys", {queue.capacity, queue.dim}, queue.keys};
  NamedArray labels{"queue.labels", {queue.capacity}, {}};
  NamedArray valid{"queue.valid", {queue.capacity}, {}};
  for (std::size_t s = 0; s < queue.capacity; ++s) {
    labels.values.push_back(static_cast<float>(queue.labels[s]));
    valid.values.push_back(static_cast<float>(queue.valid[s]));
  }
  NamedArray cursor{"queue.write_index", {1}, {static_cast<float>(queue.write_index)}};
  return {keys, labels, valid, cursor};
}

inline bool import_queue(const Checkpoint& ckpt, MemoryQueue& queue) {
  const auto* keys = ckpt.find_extra("queue.keys");
  const auto* labels = ckpt.find_extra("queue.labels");
  const auto* valid = ckpt.find_extra("queue.valid");
  const auto* cursor = ckpt.find_extra("queue.write_index");
  if (!keys || !labels || !valid || !cursor) return false;
  if (keys->dims != Shape{queue.capacity, queue.dim}) fail(ErrorKind::kCheckpointMismatch, "queue shape");
  queue.keys = keys->values;
  for (std::size_t s = 0; s < queue.capacity; ++s) {
    queue.labels[s] = static_cast<int>(labels->values[s]);
    queue.valid[s] = valid->values[s] != 0.0f;
  }
  queue.write_index = static_cast<std::size_t>(cursor->values[0]);
  return true;
}

}  // namespace damer::saml
