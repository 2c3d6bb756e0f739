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
#include <filesystem>
#include <numbers>
#include <vector>

#include "damer/core/checkpoint.hpp"
#include "damer/core/grad_check.hpp"
#include "damer/core/io.hpp"
#include "damer/core/nn.hpp"
#include "damer/core/ops.hpp"
#include "damer/core/rng.hpp"
#include "damer/core/tensor.hpp"

namespace damer {
namespace {

using TD = Tensor<double>;
using TF = Tensor<float>;

TD random_tensor(Shape dims, Rng& rng, double scale = 1.0, bool param = true) {
  std::vector<double> v(shape_size(dims));
  for (auto& x : v) x = scale * rng.normal();
  return param ? TD::parameter(std::move(dims), std::move(v)) : TD::constant(std::move(dims), std::move(v));
}

// Scalar reduction used to turn any tensor into a gradient-check objective.
TD project(const TD& y, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(y.size());
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return dot_constant(y, w);
}

void expect_error(ErrorKind kind, const std::function<void()>& fn) {
  try {
    fn();
    FAIL() << "expected " << to_string(kind);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
  }
}

// ---- tensor basics ----

TEST(Tensor, ShapeMustMatchData) {
  expect_error(ErrorKind::kShapeMismatch, [] { TF::constant({2, 3}, std::vector<float>(5)); });
  const auto t = TF::constant({2, 3}, std::vector<float>(6, 1.0f));
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
}

TEST(Tensor, NonFiniteResultTrips) {
  const auto x = TF::constant({2}, {1.0f, std::numeric_limits<float>::infinity()});
  expect_error(ErrorKind::kNonFinite, [&] { scale(x, 2.0f); });
}

TEST(Tensor, NoGradGuardStopsRecording) {
  const auto w = TD::parameter({1}, {2.0});
  {
    NoGradGuard guard;
    const auto y = scale(w, 3.0);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(scale(w, 3.0).requires_grad());
}

TEST(Tensor, BackwardAccumulatesThroughSharedInputs) {
  const auto x = TD::parameter({1}, {3.0});
  const auto y = add(x, x);  // dy/dx = 2
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
}

// ---- linear ----

TEST(Linear, IdentityWeightZeroBias) {
  const auto x = TD::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto w = TD::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const auto b = TD::constant({3}, {0, 0, 0});
  const auto y = linear(x, w, b);
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()), x.data());
}

TEST(Linear, ZeroWeightBroadcastsBias) {
  const auto x = TD::constant({2, 2}, {7, -3, 2, 9});
  const auto w = TD::zeros({3, 2});
  const auto b = TD::constant({3}, {0.5, -1, 2});
  const auto y = linear(x, w, b);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(y[r * 3 + j], b[j]);
  }
}

TEST(Linear, HandMatrixVectorProduct) {
  const auto y = linear(TD::constant({2}, {1, 2}), TD::constant({2, 2}, {1, 1, 0, 1}), TD::constant({2}, {0.5, 0}));
  ASSERT_EQ(y.dims(), (Shape{2}));
  EXPECT_DOUBLE_EQ(y[0], 3.5);
  EXPECT_DOUBLE_EQ(y[1], 2.0);
}

TEST(Linear, MatchesNaiveLoopOnBatchedInput) {
  Rng rng(3);
  const auto x = random_tensor({2, 3, 5}, rng);
  const auto w = random_tensor({4, 5}, rng);
  const auto b = random_tensor({4}, rng);
  const auto y = linear(x, w, b);
  ASSERT_EQ(y.dims(), (Shape{2, 3, 4}));
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t o = 0; o < 4; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < 5; ++i) s += w[o * 5 + i] * x[r * 5 + i];
      EXPECT_NEAR(y[r * 4 + o], s, 1e-12);
    }
  }
}

TEST(Linear, InnerDimMismatch) {
  expect_error(ErrorKind::kShapeMismatch, [] { linear(TD::zeros({2, 3}), TD::zeros({4, 2}), TD::zeros({4})); });
  expect_error(ErrorKind::kShapeMismatch, [] { linear(TD::zeros({2, 3}), TD::zeros({4, 3}), TD::zeros({3})); });
}

TEST(Linear, GradientCheck) {
  Rng rng(11);
  const auto report = gradient_check(
      "linear", [](const std::vector<TD>& in) { return project(linear(in[0], in[1], in[2]), 5); },
      {random_tensor({3, 4}, rng), random_tensor({2, 4}, rng), random_tensor({2}, rng)});
  EXPECT_LT(report.max_rel_error, 1e-6);
  EXPECT_EQ(report.per_input.size(), 3u);
}

// ---- softmax ----

TEST(Softmax, SymmetricLogitsAnyTemperature) {
  for (const double tau : {0.1, 0.7, 1.0, 1.5, 10.0}) {
    const auto p = softmax(TD::constant({2}, {0, 0}), tau);
    EXPECT_EQ(p[0], 0.5);
    EXPECT_EQ(p[1], 0.5);
  }
}

TEST(Softmax, DirectEvaluationAtTemperatureOne) {
  const auto p = softmax(TD::constant({2}, {2, 0}), 1.0);
  const double e2 = std::exp(2.0);
  EXPECT_NEAR(p[0], e2 / (e2 + 1.0), 1e-15);
  EXPECT_NEAR(p[1], 1.0 / (e2 + 1.0), 1e-15);
  EXPECT_NEAR(p[0], 0.8808, 5e-5);
  EXPECT_NEAR(p[1], 0.1192, 5e-5);
}

TEST(Softmax, HigherTemperatureFlattens) {
  double previous = 1.0;
  for (double tau = 0.25; tau <= 16.0; tau *= 2.0) {
    const double p1 = softmax(TD::constant({2}, {1, 0}), tau)[0];
    EXPECT_LT(p1, previous);
    EXPECT_GT(p1, 0.5);
    previous = p1;
  }
}

TEST(Softmax, RejectsNonPositiveTemperature) {
  expect_error(ErrorKind::kBadTemperature, [] { softmax(TD::constant({2}, {1, 0}), 0.0); });
  expect_error(ErrorKind::kBadTemperature, [] { softmax(TD::constant({2}, {1, 0}), -1.0); });
  expect_error(ErrorKind::kBadTemperature, [] { log_softmax(TD::constant({2}, {1, 0}), 0.0); });
}

TEST(Softmax, RowsSumToOneAndStayInsideUnitInterval) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 2 + rng.index(7);
    const auto z = random_tensor({3, c}, rng, 3.0, false);
    const double tau = rng.uniform(0.3, 3.0);
    const auto pd = softmax(z, tau);
    const auto pf = softmax(TF::constant(z.dims(), std::vector<float>(z.data().begin(), z.data().end())),
                            static_cast<float>(tau));
    for (std::size_t r = 0; r < 3; ++r) {
      double sd = 0.0, sf = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        EXPECT_GT(pd[r * c + j], 0.0);
        EXPECT_LT(pd[r * c + j], 1.0);
        sd += pd[r * c + j];
        sf += pf[r * c + j];
      }
      EXPECT_NEAR(sd, 1.0, 1e-12);
      EXPECT_NEAR(sf, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, StableForLargeLogits) {
  const auto p = softmax(TD::constant({3}, {1000, 999, 0}), 1.0);
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Softmax, LogSoftmaxMatchesLogOfSoftmax) {
  Rng rng(5);
  const auto z = random_tensor({4, 3}, rng, 3.0, false);
  const auto p = softmax(z, 0.8);
  const auto lp = log_softmax(z, 0.8);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(lp[i], std::log(p[i]), 1e-12);
}

TEST(Softmax, GradientCheck) {
  Rng rng(12);
  const auto a = gradient_check(
      "softmax", [](const std::vector<TD>& in) { return project(softmax(in[0], 0.7), 9); },
      {random_tensor({3, 4}, rng)});
  EXPECT_LT(a.max_rel_error, 1e-6);
  const auto b = gradient_check(
      "log_softmax", [](const std::vector<TD>& in) { return project(log_softmax(in[0], 1.3), 10); },
      {random_tensor({3, 4}, rng)});
  EXPECT_LT(b.max_rel_error, 1e-6);
}

// ---- layer norm ----

TEST(LayerNorm, ConstantTokenMapsToZero) {
  const auto y = layer_norm(TD::constant({1, 4}, {3, 3, 3, 3}), TD::constant({4}, {1, 1, 1, 1}),
                            TD::zeros({4}), 1e-5);
  for (const double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, StandardisedTokenUnchangedUpToEps) {
  const double eps = 1e-5;
  const auto y = layer_norm(TD::constant({1, 2}, {-1, 1}), TD::constant({2}, {1, 1}), TD::zeros({2}), eps);
  EXPECT_NEAR(y[0], -1.0 / std::sqrt(1.0 + eps), 1e-15);
  EXPECT_NEAR(y[1], 1.0 / std::sqrt(1.0 + eps), 1e-15);
  EXPECT_NEAR(y[1], 1.0, 1e-5);
}

TEST(LayerNorm, HandTwoElementToken) {
  const auto y = layer_norm(TD::constant({2}, {1, 3}), TD::constant({2}, {1, 1}), TD::zeros({2}), 1e-12);
  EXPECT_NEAR(y[0], -1.0, 1e-10);
  EXPECT_NEAR(y[1], 1.0, 1e-10);
}

TEST(LayerNorm, PerTokenMomentsBeforeAffine) {
  Rng rng(31);
  const std::size_t d = 64;
  const auto x = random_tensor({5, d}, rng, 4.0, false);
  const auto y = layer_norm(TF::constant(x.dims(), std::vector<float>(x.data().begin(), x.data().end())),
                            TF::constant({d}, std::vector<float>(d, 1.0f)), TF::zeros({d}), 1e-5f);
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += y[r * d + j];
    m /= d;
    for (std::size_t j = 0; j < d; ++j) v += (y[r * d + j] - m) * (y[r * d + j] - m);
    v /= d;
    EXPECT_LT(std::abs(m), 1e-6);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}

TEST(LayerNorm, GradientCheck) {
  Rng rng(13);
  const auto r = gradient_check(
      "layer_norm", [](const std::vector<TD>& in) { return project(layer_norm(in[0], in[1], in[2], 1e-5), 4); },
      {random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

// ---- gelu ----

TEST(Gelu, FixedPoints) {
  const auto y = gelu(TD::constant({4}, {0.0, 1.0, -10.0, 40.0}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 0.5 * (1.0 + std::erf(1.0 / std::numbers::sqrt2)), 1e-15);
  EXPECT_NEAR(y[1], 0.8413, 5e-5);
  EXPECT_NEAR(y[2], 0.0, 1e-20);
  EXPECT_NEAR(y[3], 40.0, 1e-12);
}

TEST(Gelu, NotTheTanhApproximation) {
  const double x = 1.5;
  const double exact = x * 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double approx =
      0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (x + 0.044715 * x * x * x)));
  const double y = gelu(TD::constant({1}, {x}))[0];
  EXPECT_NEAR(y, exact, 1e-15);
  EXPECT_GT(std::abs(y - approx), 1e-6);
}

TEST(Gelu, GradientCheck) {
  Rng rng(14);
  const auto r = gradient_check("gelu", [](const std::vector<TD>& in) { return project(gelu(in[0]), 3); },
                                {random_tensor({4, 5}, rng, 2.0)});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

// ---- attention ----

MultiHeadAttention<double> identity_attention(std::size_t d, std::size_t heads) {
  std::vector<double> eye(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  auto lin = [&] { return LinearLayer<double>{TD::parameter({d, d}, eye), TD::parameter({d}, std::vector<double>(d))}; };
  return {lin(), lin(), lin(), lin(), heads};
}

TEST(Attention, SingleKeyReturnsItsValue) {
  Rng rng(41);
  ParameterStore<double> store;
  const auto mha = make_attention(store, "a", 4, 2, rng);
  const auto q = random_tensor({1, 3, 4}, rng, 1.0, false);
  const auto kv = random_tensor({1, 1, 4}, rng, 1.0, false);
  const auto out = multi_head_attention(q, kv, kv, mha);
  const auto expected = mha.output(mha.value(kv));
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out[t * 4 + j], expected[j], 1e-12);
  }
}

TEST(Attention, IdenticalKeysGiveUniformWeightsAndMeanValue) {
  Rng rng(42);
  ParameterStore<double> store;
  const auto mha = make_attention(store, "a", 4, 2, rng);
  const auto q = random_tensor({1, 2, 4}, rng, 1.0, false);
  const std::vector<double> key_row{0.3, -0.2, 0.9, 0.1};
  std::vector<double> keys;
  for (int i = 0; i < 3; ++i) keys.insert(keys.end(), key_row.begin(), key_row.end());
  const auto k = TD::constant({1, 3, 4}, keys);
  const auto v = random_tensor({1, 3, 4}, rng, 1.0, false);
  std::vector<double> weights;
  const auto out = multi_head_attention(q, k, v, mha, &weights);
  for (const double w : weights) EXPECT_NEAR(w, 1.0 / 3.0, 1e-12);
  const auto pv = mha.value(v);
  std::vector<double> mean(4, 0.0);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t j = 0; j < 4; ++j) mean[j] += pv[t * 4 + j] / 3.0;
  }
  const auto expected = mha.output(TD::constant({1, 1, 4}, mean));
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out[t * 4 + j], expected[j], 1e-12);
  }
}

TEST(Attention, HandTwoTokenSingleHead) {
  const auto mha = identity_attention(2, 1);
  const std::vector<double> q{1, 0, 0, 1}, k{1, 2, 0, 1}, v{1, 0, 5, 3};
  const auto out = multi_head_attention(TD::constant({1, 2, 2}, q), TD::constant({1, 2, 2}, k),
                                        TD::constant({1, 2, 2}, v), mha);
  // Oracle: softmax(Q K^T / sqrt(2)) V evaluated element by element.
  for (std::size_t i = 0; i < 2; ++i) {
    double s[2];
    for (std::size_t j = 0; j < 2; ++j) s[j] = (q[i * 2] * k[j * 2] + q[i * 2 + 1] * k[j * 2 + 1]) / std::sqrt(2.0);
    const double z = std::exp(s[0]) + std::exp(s[1]);
    for (std::size_t c = 0; c < 2; ++c) {
      const double expected = (std::exp(s[0]) * v[c] + std::exp(s[1]) * v[2 + c]) / z;
      EXPECT_NEAR(out[i * 2 + c], expected, 1e-12);
    }
  }
}

TEST(Attention, WeightRowsSumToOneAndIgnoreLogitShift) {
  Rng rng(43);
  const auto q = random_tensor({2, 3, 4}, rng, 1.0, false);
  const auto k = random_tensor({2, 5, 4}, rng, 1.0, false);
  const auto v = random_tensor({2, 5, 4}, rng, 1.0, false);
  std::vector<double> w1, w2;
  scaled_dot_product_attention(q, k, v, 2, &w1);
  // Adding a constant vector c to every key shifts each (query, head) logit row by q.c.
  std::vector<double> shifted(k.data());
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 0.37 * static_cast<double>(i % 4);
  scaled_dot_product_attention(q, TD::constant(k.dims(), shifted), v, 2, &w2);
  ASSERT_EQ(w1.size(), 2u * 2u * 3u * 5u);
  for (std::size_t row = 0; row < w1.size() / 5; ++row) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      s += w1[row * 5 + j];
      EXPECT_NEAR(w1[row * 5 + j], w2[row * 5 + j], 1e-12);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Attention, HeadDivisibility) {
  Rng rng(44);
  ParameterStore<double> store;
  expect_error(ErrorKind::kHeadDivisibility, [&] { make_attention(store, "a", 6, 4, rng); });
  expect_error(ErrorKind::kHeadDivisibility, [&] {
    scaled_dot_product_attention(TD::zeros({1, 2, 6}), TD::zeros({1, 2, 6}), TD::zeros({1, 2, 6}), 4);
  });
}

TEST(Attention, ShapeMismatch) {
  const auto mha = identity_attention(4, 2);
  expect_error(ErrorKind::kShapeMismatch,
               [&] { multi_head_attention(TD::zeros({1, 2, 4}), TD::zeros({1, 3, 4}), TD::zeros({1, 2, 4}), mha); });
  expect_error(ErrorKind::kShapeMismatch,
               [&] { multi_head_attention(TD::zeros({2, 2, 4}), TD::zeros({1, 3, 4}), TD::zeros({1, 3, 4}), mha); });
}

TEST(Attention, GradientCheck) {
  Rng rng(15);
  ParameterStore<double> store;
  const auto mha = make_attention(store, "a", 4, 2, rng);
  std::vector<TD> inputs{random_tensor({2, 3, 4}, rng), random_tensor({2, 2, 4}, rng)};
  for (const auto& [name, t] : store.entries()) inputs.push_back(t);
  const auto r = gradient_check(
      "multi_head_attention",
      [&](const std::vector<TD>& in) { return project(multi_head_attention(in[0], in[1], in[1], mha), 8); }, inputs);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

// ---- dropout ----

TEST(Dropout, InvertedScalingAndInferenceIdentity) {
  Rng rng(51);
  const auto x = TD::constant({10000}, std::vector<double>(10000, 1.0));
  EXPECT_EQ(dropout(x, 0.1, &rng, false).data(), x.data());
  const auto y = dropout(x, 0.1, &rng, true);
  std::size_t dropped = 0;
  for (const double v : y.values()) {
    if (v == 0.0) {
      ++dropped;
    } else {
      EXPECT_NEAR(v, 1.0 / 0.9, 1e-15);
    }
  }
  EXPECT_NEAR(static_cast<double>(dropped) / 10000.0, 0.1, 0.02);
}

TEST(Dropout, DeterministicGivenSeed) {
  const auto x = TD::constant({256}, std::vector<double>(256, 2.0));
  Rng a(7), b(7);
  EXPECT_EQ(dropout(x, 0.3, &a, true).data(), dropout(x, 0.3, &b, true).data());
}

// ---- remaining differentiable helpers ----

TEST(Ops, HelperGradients) {
  Rng rng(16);
  const auto pooled = gradient_check(
      "mean_tokens", [](const std::vector<TD>& in) { return project(mean_tokens(in[0]), 1); },
      {random_tensor({2, 3, 4}, rng)});
  EXPECT_LT(pooled.max_rel_error, 1e-6);
  const std::vector<std::pair<std::string, CheckedFn>> cases = {
      {"concat_last", [](const std::vector<TD>& in) {
         return project(concat_last(select_rows(in[0], {0, 2}), select_rows(in[0], {1, 0})), 2);
       }},
      {"l2_normalize_rows", [](const std::vector<TD>& in) { return project(l2_normalize_rows(in[0]), 3); }},
      {"add_broadcast", [](const std::vector<TD>& in) {
         return project(add_broadcast(in[0], select_rows(in[0], {0, 1, 2})), 4);
       }},
      {"js_divergence_rows", [](const std::vector<TD>& in) {
         return mean(js_divergence_rows(softmax(in[0], 1.0), softmax(in[0], 0.5)));
       }},
      {"nll_rows", [](const std::vector<TD>& in) { return mean(nll_rows(log_softmax(in[0], 1.0), {0, 1, 3})); }},
  };
  for (const auto& [name, fn] : cases) {
    const auto r = gradient_check(name, fn, {random_tensor({3, 4}, rng)});
    EXPECT_LT(r.max_rel_error, 1e-5) << name;
  }
}

TEST(GradCheck, ConstantComputationReportsZero) {
  const auto r = gradient_check(
      "constant", [](const std::vector<TD>&) { return TD::scalar(4.0); }, {TD::parameter({3}, {1, 2, 3})});
  EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(GradCheck, ShiftInvariantKeyBiasIsNotScoredOnRoundoff) {
  // Adding the same vector to every key moves all scores of a query equally,
  // so the key bias has an exactly zero gradient.
  Rng rng(31);
  ParameterStore<double> store;
  const auto mha = make_attention(store, "a", 4, 2, rng);
  const auto q = random_tensor({1, 3, 4}, rng, 3.0, false);
  const auto kv = random_tensor({1, 5, 4}, rng, 3.0, false);
  const auto r = gradient_check(
      "key_bias",
      [&](const std::vector<TD>&) { return combine_scalars<double>({project(multi_head_attention(q, kv, kv, mha), 8)}, {50.0}); },
      {store.find("a.k.bias")});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, StepRange) {
  const CheckedFn fn = [](const std::vector<TD>& in) { return mean(in[0]); };
  expect_error(ErrorKind::kConfigError, [&] { gradient_check("x", fn, {TD::parameter({1}, {1.0})}, 1e-6); });
  expect_error(ErrorKind::kConfigError, [&] { gradient_check("x", fn, {TD::parameter({1}, {1.0})}, 1e-2); });
}

TEST(GradCheck, DetectsAWrongGradient) {
  // A deliberately broken op: forward x^2, backward claims 3x.
  const CheckedFn fn = [](const std::vector<TD>& in) {
    const auto x = in[0];
    Node<double>* xn = x.node();
    return make_result<double>("broken", {1}, {x[0] * x[0]}, {x},
                               [=](const std::vector<double>& g) { xn->grad_buffer()[0] += g[0] * 3.0 * xn->value[0]; });
  };
  EXPECT_GT(gradient_check("broken", fn, {TD::parameter({1}, {1.5})}).max_rel_error, 0.1);
}

// ---- rng ----

TEST(Rng, ReproducibleStreams) {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform(), b.uniform());
  EXPECT_EQ(a.normal(), b.normal());
  std::vector<int> x{1, 2, 3, 4, 5, 6, 7, 8}, y = x;
  a.shuffle(x);
  b.shuffle(y);
  EXPECT_EQ(x, y);
}

TEST(Rng, IndexStaysInRange) {
  Rng rng(1);
  std::vector<int> hits(5, 0);
  for (int i = 0; i < 5000; ++i) ++hits[rng.index(5)];
  for (const int h : hits) EXPECT_GT(h, 800);
}

// ---- checkpoint container ----

TEST(Checkpoint, RoundTripsEveryField) {
  Checkpoint c;
  c.config_hash = 0x0123456789abcdefULL;
  c.config_text = "epochs = 3\n";
  c.parameters = {{"w", {2, 2}, {1, 2, 3, 4}}, {"b", {2}, {-1, 0.5f}}};
  c.optimizer_step = 17;
  c.optimizer_state = {{"m.w", {2, 2}, {0, 0, 1, 1}}};
  c.extras = {{"queue.labels", {3}, {0, 1, 0}}};
  const auto d = decode_checkpoint(encode_checkpoint(c));
  EXPECT_EQ(d.config_hash, c.config_hash);
  EXPECT_EQ(d.config_text, c.config_text);
  ASSERT_EQ(d.parameters.size(), 2u);
  EXPECT_EQ(d.parameters[1].name, "b");
  EXPECT_EQ(d.parameters[0].dims, (Shape{2, 2}));
  EXPECT_EQ(d.parameters[1].values, c.parameters[1].values);
  EXPECT_EQ(d.optimizer_step, 17u);
  EXPECT_EQ(d.optimizer_state[0].values, c.optimizer_state[0].values);
  ASSERT_NE(d.find_extra("queue.labels"), nullptr);
  EXPECT_EQ(d.find_extra("nope"), nullptr);
}

TEST(Checkpoint, RejectsForeignBytes) {
  expect_error(ErrorKind::kCheckpointMismatch, [] { decode_checkpoint({'D', 'M', 'R', 'F', 1, 0, 0, 0}); });
  auto bytes = encode_checkpoint(Checkpoint{});
  bytes.pop_back();
  EXPECT_THROW(decode_checkpoint(bytes), Error);
}

TEST(Checkpoint, AtomicSaveAndLoad) {
  const auto dir = std::filesystem::temp_directory_path() / "damer_ckpt_test";
  std::filesystem::create_directories(dir);
  Checkpoint c;
  c.parameters = {{"p", {1}, {2.5f}}};
  save_checkpoint(dir / "a.dmrc", c);
  EXPECT_FALSE(std::filesystem::exists(dir / "a.dmrc.tmp"));
  EXPECT_EQ(load_checkpoint(dir / "a.dmrc").parameters[0].values[0], 2.5f);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace damer
