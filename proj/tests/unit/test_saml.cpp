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

#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <numbers>
#include <vector>

#include "damer/core/grad_check.hpp"
#include "damer/core/ops.hpp"
#include "damer/core/rng.hpp"
#include "damer/saml.hpp"

namespace damer::saml {
namespace {

using TD = Tensor<double>;

void expect_error(ErrorKind kind, const std::function<void()>& fn) {
  try {
    fn();
    FAIL() << "expected " << to_string(kind);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
  }
}

std::vector<double> unit_rows(Rng& rng, std::size_t n, std::size_t d) {
  std::vector<double> v(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (v[i * d + j] = rng.normal()) * v[i * d + j];
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] /= std::sqrt(s);
  }
  return v;
}

// Term-by-term evaluation: for each query, minus the sum over same-class valid
// keys of log(exp(q.k_j / tau) / sum_k exp(q.k_k / tau)), averaged over queries.
double contrastive_oracle(const std::vector<double>& q, const std::vector<int>& ql, const MemoryQueue& queue,
                          double tau, bool normalize = false) {
  const std::size_t d = queue.dim, nq = ql.size();
  double total = 0.0;
  for (std::size_t i = 0; i < nq; ++i) {
    double denom = 0.0;
    for (std::size_t s = 0; s < queue.capacity; ++s) {
      if (!queue.valid[s]) continue;
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i * d + c] * queue.keys[s * d + c];
      denom += std::exp(dot / tau);
    }
    double term = 0.0;
    int positives = 0;
    for (std::size_t s = 0; s < queue.capacity; ++s) {
      if (!queue.valid[s] || queue.labels[s] != ql[i]) continue;
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i * d + c] * queue.keys[s * d + c];
      term -= std::log(std::exp(dot / tau) / denom);
      ++positives;
    }
    total += (normalize && positives > 0) ? term / positives : term;
  }
  return nq ? total / static_cast<double>(nq) : 0.0;
}

// ---- enqueue ----

TEST(Enqueue, WrapsModuloCapacity) {
  MemoryQueue q(4, 1);
  enqueue<double>(q, std::vector<double>{1, 2, 3}, {0, 0, 0});
  EXPECT_EQ(q.write_index, 3u);
  enqueue<double>(q, std::vector<double>{-1, -2, -3}, {1, 1, 1});
  EXPECT_EQ(q.write_index, 2u);
  EXPECT_EQ(q.labels, (std::vector<int>{1, 1, 0, 1}));
  EXPECT_EQ(q.keys, (std::vector<float>{-1, -1, 1, -1}));
}

TEST(Enqueue, NormalisesThreeFourFive) {
  MemoryQueue q(2, 2);
  enqueue<double>(q, std::vector<double>{3, 4}, {1});
  EXPECT_FLOAT_EQ(q.keys[0], 0.6f);
  EXPECT_FLOAT_EQ(q.keys[1], 0.8f);
  EXPECT_TRUE(q.valid[0]);
}

TEST(Enqueue, ZeroFeatureIsStoredInvalid) {
  MemoryQueue q(3, 2);
  enqueue<double>(q, std::vector<double>{0, 0, 1, 0}, {0, 1});
  EXPECT_FALSE(q.valid[0]);
  EXPECT_EQ(q.keys[0], 0.0f);
  EXPECT_TRUE(q.valid[1]);
  EXPECT_EQ(q.valid_count(), 1u);
  // A query of class 0 has no valid positive: contributes 0.
  const auto loss = contrastive_loss(TD::constant({1, 2}, {1, 0}), {0}, q);
  EXPECT_EQ(loss.item(), 0.0);
}

TEST(Enqueue, BatchTooLarge) {
  MemoryQueue q(2, 1);
  expect_error(ErrorKind::kBatchTooLarge, [&] { enqueue<double>(q, std::vector<double>{1, 2, 3}, {0, 0, 0}); });
}

TEST(Enqueue, ExhaustiveWrapAroundAgainstReferenceFifo) {
  for (std::size_t k = 1; k <= 5; ++k) {
    for (std::size_t b1 = 1; b1 <= std::min<std::size_t>(k, 5); ++b1) {
      for (std::size_t b2 = 1; b2 <= std::min<std::size_t>(k, 5); ++b2) {
        for (std::size_t b3 = 1; b3 <= std::min<std::size_t>(k, 5); ++b3) {
          MemoryQueue q(k, 1);
          std::deque<std::pair<double, std::size_t>> fifo;  // (value, slot)
          std::size_t cursor = 0;
          double next = 1.0;
          for (const std::size_t b : {b1, b2, b3}) {
            std::vector<double> vals(b);
            std::vector<int> labels(b);
            for (std::size_t i = 0; i < b; ++i) {
              vals[i] = (static_cast<int>(next) % 2 ? 1.0 : -1.0);
              labels[i] = static_cast<int>(next);
              fifo.emplace_back(next, (cursor + i) % k);
              next += 1.0;
            }
            enqueue<double>(q, vals, labels);
            cursor = (cursor + b) % k;
            ASSERT_EQ(q.write_index, cursor);
          }
          // The last min(k, total) items occupy their slots; everything else untouched.
          const std::size_t total = fifo.size();
          for (std::size_t j = (total > k ? total - k : 0); j < total; ++j) {
            const auto [label, slot] = fifo[j];
            ASSERT_EQ(q.labels[slot], static_cast<int>(label)) << "k=" << k;
            ASSERT_TRUE(q.valid[slot]);
          }
          ASSERT_EQ(q.valid_count(), std::min(k, total));
        }
      }
    }
  }
}

TEST(Enqueue, FullQueueHoldsMostRecentItemsInOrder) {
  MemoryQueue q(5, 2);
  Rng rng(1);
  int stamp = 0;
  for (int step = 0; step < 7; ++step) {
    const std::size_t b = 1 + rng.index(5);
    std::vector<double> f(b * 2);
    std::vector<int> labels(b);
    for (std::size_t i = 0; i < b; ++i) {
      f[i * 2] = 1.0 + stamp;
      f[i * 2 + 1] = 0.5;
      labels[i] = stamp++;
    }
    enqueue<double>(q, f, labels);
  }
  ASSERT_GE(stamp, 5);
  EXPECT_EQ(q.valid_count(), 5u);
  for (std::size_t j = 0; j < 5; ++j) {
    const std::size_t slot = (q.write_index + j) % 5;
    EXPECT_EQ(q.labels[slot], stamp - 5 + static_cast<int>(j));
    EXPECT_NEAR(std::hypot(q.keys[slot * 2], q.keys[slot * 2 + 1]), 1.0, 1e-6);
  }
}

TEST(Enqueue, MomentumBlendsOverwrittenSlots) {
  MemoryQueue q(1, 2, 0.95);
  enqueue<double>(q, std::vector<double>{1, 0}, {0});
  enqueue<double>(q, std::vector<double>{0, 1}, {1});
  const double n = std::hypot(0.95, 0.05);
  EXPECT_NEAR(q.keys[0], 0.95 / n, 1e-6);
  EXPECT_NEAR(q.keys[1], 0.05 / n, 1e-6);
  EXPECT_EQ(q.labels[0], 1);
}

// ---- contrastive loss ----

TEST(Contrastive, SingleMatchingKeyIsZero) {
  MemoryQueue q(4, 2);
  enqueue<double>(q, std::vector<double>{0.3, 0.9}, {1});
  EXPECT_NEAR(contrastive_loss(TD::constant({1, 2}, {1, 0}), {1}, q).item(), 0.0, 1e-15);
}

TEST(Contrastive, QueryWithoutPositivesContributesZero) {
  MemoryQueue q(4, 2);
  enqueue<double>(q, std::vector<double>{1, 0, 0, 1}, {0, 0});
  EXPECT_EQ(contrastive_loss(TD::constant({1, 2}, {0.6, 0.8}), {1}, q).item(), 0.0);
}

TEST(Contrastive, EmptyQueueIsZero) {
  MemoryQueue q(4, 2);
  EXPECT_EQ(contrastive_loss(TD::constant({1, 2}, {0.6, 0.8}), {1}, q).item(), 0.0);
}

TEST(Contrastive, HandThreeKeyQueue) {
  MemoryQueue q(3, 2);
  enqueue<double>(q, std::vector<double>{1, 0, 0, 1, -1, 1}, {0, 1, 0});
  const std::vector<double> query{0.6, 0.8};
  const double tau = 0.07;
  const double s0 = 0.6 / tau, s1 = 0.8 / tau, s2 = (-0.6 + 0.8) / std::sqrt(2.0) / tau;
  const double z = std::exp(s0) + std::exp(s1) + std::exp(s2);
  const double expected = -(std::log(std::exp(s0) / z) + std::log(std::exp(s2) / z));
  EXPECT_NEAR(contrastive_loss(TD::constant({1, 2}, query), {0}, q, tau).item(), expected, 1e-6 * expected);
}

TEST(Contrastive, RandomInstancesMatchBruteForce) {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng.index(8), d = 1 + rng.index(4), nq = 1 + rng.index(4);
    MemoryQueue q(k, d);
    const std::size_t fill = rng.index(2 * k + 1);
    for (std::size_t i = 0; i < fill; ++i) {
      std::vector<double> f(d);
      for (auto& v : f) v = rng.normal();
      enqueue<double>(q, f, {static_cast<int>(rng.index(2))});
    }
    const auto queries = unit_rows(rng, nq, d);
    std::vector<int> labels(nq);
    for (auto& y : labels) y = static_cast<int>(rng.index(2));
    const double tau = rng.uniform(0.05, 1.0);
    for (const bool norm : {false, true}) {
      const double got = contrastive_loss(TD::constant({nq, d}, queries), labels, q, tau, norm).item();
      const double want = contrastive_oracle(queries, labels, q, tau, norm);
      ASSERT_NEAR(got, want, 1e-6 * std::max(1.0, std::abs(want)));
      ASSERT_GE(got, 0.0);
    }
  }
}

TEST(Contrastive, IdenticalKeysDependOnlyOnCounts) {
  MemoryQueue q(5, 2);
  for (int i = 0; i < 5; ++i) enqueue<double>(q, std::vector<double>{1, 1}, {i < 3 ? 1 : 0});
  for (const double tau : {0.05, 0.07, 0.5, 2.0}) {
    EXPECT_NEAR(contrastive_loss(TD::constant({1, 2}, {0.6, 0.8}), {1}, q, tau).item(), 3.0 * std::log(5.0), 1e-9);
  }
}

TEST(Contrastive, BadTemperature) {
  MemoryQueue q(2, 2);
  expect_error(ErrorKind::kBadTemperature, [&] { contrastive_loss(TD::constant({1, 2}, {1, 0}), {0}, q, 0.0); });
}

TEST(Contrastive, GradientCheckAndKeysStayConstant) {
  Rng rng(5);
  MemoryQueue q(6, 3);
  enqueue<double>(q, unit_rows(rng, 6, 3), {0, 1, 1, 0, 1, 0});
  const auto keys_before = q.keys;
  const std::vector<int> labels{1, 0};
  for (const bool norm : {false, true}) {
    const CheckedFn fn = [&](const std::vector<TD>& in) -> TD {
      return contrastive_loss(l2_normalize_rows(in[0]), labels, q, 0.2, norm);
    };
    const auto r = gradient_check("contrastive_loss", fn,
        {TD::parameter({2, 3}, unit_rows(rng, 2, 3))});
    EXPECT_LT(r.max_rel_error, 1e-5);
  }
  EXPECT_EQ(q.keys, keys_before);
}

TEST(Contrastive, EnqueuedFeaturesCarryNoGraph) {
  // Features produced by a parameterised op are enqueued by value; the loss
  // graph reaches the query parameters only.
  const auto w = TD::parameter({2, 2}, {1, 0, 0, 1});
  const auto produced = linear(TD::constant({1, 2}, {0.6, 0.8}), w);
  MemoryQueue q(2, 2);
  enqueue<double>(q, produced.values(), {0});
  const auto query = TD::parameter({1, 2}, {0.8, 0.6});
  backward(contrastive_loss(query, {0}, q));
  EXPECT_FALSE(w.has_grad());
  EXPECT_TRUE(query.has_grad());
}

// ---- diagnostics ----

TEST(QueueDiagnostics, BalancedQueueHasLn2Entropy) {
  MemoryQueue q(4, 2);
  enqueue<double>(q, std::vector<double>{1, 0, 0, 1, 1, 1, -1, 0}, {0, 1, 0, 1});
  const auto s = queue_diagnostics(q);
  EXPECT_NEAR(s.label_entropy, std::numbers::ln2, 1e-15);
  EXPECT_EQ(s.class_coverage, (std::vector<double>{0.5, 0.5}));
}

TEST(QueueDiagnostics, SingleClass) {
  MemoryQueue q(4, 2);
  enqueue<double>(q, std::vector<double>{1, 0, 0, 1}, {1, 1});
  const auto s = queue_diagnostics(q);
  EXPECT_EQ(s.label_entropy, 0.0);
  EXPECT_EQ(s.class_coverage, (std::vector<double>{0.0, 1.0}));
}

TEST(QueueDiagnostics, CentroidDistances) {
  MemoryQueue q(3, 2);
  enqueue<double>(q, std::vector<double>{1, 0, 0, 1, 5, 0}, {0, 0, 1});
  const auto s = queue_diagnostics(q);
  // Class 0 centroid (0.5, 0.5), not re-normalised.
  ASSERT_EQ(s.centroid_distances[0].size(), 2u);
  EXPECT_NEAR(s.centroid_distances[0][0], std::sqrt(0.5), 1e-7);
  EXPECT_NEAR(s.centroid_distances[1][0], 0.0, 1e-7);
}

TEST(QueueDiagnostics, EmptyQueue) {
  MemoryQueue q(3, 2);
  expect_error(ErrorKind::kEmptyQueue, [&] { queue_diagnostics(q); });
}

TEST(QueueSnapshot, RoundTripsThroughCheckpointExtras) {
  Rng rng(9);
  MemoryQueue q(5, 3);
  enqueue<double>(q, unit_rows(rng, 3, 3), {0, 1, 1});
  Checkpoint c;
  c.extras = export_queue(q);
  MemoryQueue r(5, 3);
  ASSERT_TRUE(import_queue(c, r));
  EXPECT_EQ(r.keys, q.keys);
  EXPECT_EQ(r.labels, q.labels);
  EXPECT_EQ(r.valid, q.valid);
  EXPECT_EQ(r.write_index, q.write_index);
  MemoryQueue wrong(4, 3);
  expect_error(ErrorKind::kCheckpointMismatch, [&] { import_queue(c, wrong); });
  EXPECT_FALSE(import_queue(Checkpoint{}, r));
}

}  // namespace
}  // namespace damer::saml
