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
#include <string>
#include <utility>
#include <vector>

#include "damer/core/error.hpp"
#include "damer/core/ops.hpp"
#include "damer/core/rng.hpp"
#include "damer/core/tensor.hpp"

namespace damer {

/// Training-mode switches threaded through a forward pass.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

/// Ordered, named parameter table. Order is creation order and is what the
/// checkpoint format and the optimiser state rely on.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> add(const std::string& name, Shape dims, std::vector<T> values) {
    for (const auto& [existing, _] : entries_) {
      if (existing == name) fail(ErrorKind::kConfigError, "duplicate parameter name " + name);
    }
    auto t = Tensor<T>::parameter(std::move(dims), std::move(values));
    entries_.emplace_back(name, t);
    return t;
  }

  /// U(-bound, bound).
  Tensor<T> uniform(const std::string& name, Shape dims, double bound, Rng& rng) {
    std::vector<T> values(shape_size(dims));
    for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
    return add(name, std::move(dims), std::move(values));
  }

  Tensor<T> filled(const std::string& name, Shape dims, T value) {
    const auto n = shape_size(dims);
    return add(name, std::move(dims), std::vector<T>(n, value));
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor<T>>>& entries() { return entries_; }

  Tensor<T> find(const std::string& name) const {
    for (const auto& [existing, t] : entries_) {
      if (existing == name) return t;
    }
    fail(ErrorKind::kCheckpointMismatch, "no parameter named " + name);
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

template <typename T>
struct LinearLayer {
  Tensor<T> weight;  // [d_out x d_in]
  Tensor<T> bias;    // [d_out]

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

/// Fan-in uniform init, bound 1/sqrt(d_in), for both weight and bias.
template <typename T>
LinearLayer<T> make_linear(ParameterStore<T>& store, const std::string& name, std::size_t d_in, std::size_t d_out,
                           Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  LinearLayer<T> layer;
  layer.weight = store.uniform(name + ".weight", {d_out, d_in}, bound, rng);
  layer.bias = store.uniform(name + ".bias", {d_out}, bound, rng);
  return layer;
}

template <typename T>
struct LayerNormLayer {
  Tensor<T> gamma;
  Tensor<T> beta;
  T eps = T(1e-5);

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, eps); }
};

template <typename T>
LayerNormLayer<T> make_layer_norm(ParameterStore<T>& store, const std::string& name, std::size_t d) {
  return {store.filled(name + ".gamma", {d}, T{1}), store.filled(name + ".beta", {d}, T{0})};
}

/// Learned Q/K/V/output projections around scaled dot-product attention.
template <typename T>
struct MultiHeadAttention {
  LinearLayer<T> query;
  LinearLayer<T> key;
  LinearLayer<T> value;
  LinearLayer<T> output;
  std::size_t heads = 1;
};

template <typename T>
MultiHeadAttention<T> make_attention(ParameterStore<T>& store, const std::string& name, std::size_t d,
                                     std::size_t heads, Rng& rng) {
  if (heads == 0 || d % heads != 0) {
    fail(ErrorKind::kHeadDivisibility, "model dim " + std::to_string(d) + " not divisible by heads");
  }
  return {make_linear(store, name + ".q", d, d, rng), make_linear(store, name + ".k", d, d, rng),
          make_linear(store, name + ".v", d, d, rng), make_linear(store, name + ".o", d, d, rng), heads};
}

/// softmax(Q K^T / sqrt(d_k)) V per head, then the output projection.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& queries, const Tensor<T>& keys, const Tensor<T>& values,
                               const MultiHeadAttention<T>& mha, std::vector<T>* weights_out = nullptr) {
  if (queries.rank() != 3 || keys.rank() != 3 || values.rank() != 3 || queries.dim(2) != keys.dim(2) ||
      keys.dims() != values.dims() || queries.dim(0) != keys.dim(0)) {
    fail(ErrorKind::kShapeMismatch, "multi_head_attention: Q " + shape_str(queries.dims()) + " K " +
                                        shape_str(keys.dims()) + " V " + shape_str(values.dims()));
  }
  const auto q = mha.query(queries);
  const auto k = mha.key(keys);
  const auto v = mha.value(values);
  return mha.output(scaled_dot_product_attention(q, k, v, mha.heads, weights_out));
}

/// Linear(d -> expansion*d), GELU, Linear(expansion*d -> d).
template <typename T>
struct FeedForward {
  LinearLayer<T> expand;
  LinearLayer<T> contract;

  Tensor<T> operator()(const Tensor<T>& x) const { return contract(gelu(expand(x))); }
};

template <typename T>
FeedForward<T> make_feed_forward(ParameterStore<T>& store, const std::string& name, std::size_t d,
                                 std::size_t expansion, Rng& rng) {
  return {make_linear(store, name + ".fc1", d, d * expansion, rng),
          make_linear(store, name + ".fc2", d * expansion, d, rng)};
}

}  // namespace damer
