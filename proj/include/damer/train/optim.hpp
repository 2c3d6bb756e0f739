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
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "damer/core/checkpoint.hpp"
#include "damer/core/error.hpp"
#include "damer/core/tensor.hpp"

namespace damer::train {

/// lr0 * (1 + cos(pi * epoch / total)) / 2; constant lr0 when disabled.
inline double learning_rate_at(std::size_t epoch, std::size_t total, double lr0, bool cosine = true) {
  if (!cosine) return lr0;
  if (total == 0 || epoch > total) fail(ErrorKind::kBadEpoch, "learning_rate_at: epoch out of range");
  const double ratio = static_cast<double>(epoch) / static_cast<double>(total);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * ratio));
}

template <typename T>
double global_grad_norm(const std::vector<Tensor<T>>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (const T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(const std::vector<Tensor<T>>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (!std::isfinite(norm)) fail(ErrorKind::kNonFiniteLoss, "non-finite gradient norm");
  if (norm > max_norm) {
    const double factor = max_norm / (norm + 1e-6);
    for (auto p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * factor);
    }
  }
  return norm;
}

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with bias correction and decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, Tensor<T>>> params, AdamWOptions opts = {})
      : params_(std::move(params)), opts_(opts) {
    for (const auto& [name, p] : params_) {
      m_.emplace_back(p.size(), 0.0f);
      v_.emplace_back(p.size(), 0.0f);
    }
  }

  void step(double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].second;
      if (!p.has_grad()) continue;
      auto values = p.mutable_values();
      const auto grads = p.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < values.size(); ++j) {
        const double g = grads[j];
        const double mj = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g;
        const double vj = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g * g;
        m[j] = static_cast<float>(mj);
        v[j] = static_cast<float>(vj);
        const double update = (mj / bc1) / (std::sqrt(vj / bc2) + opts_.eps) + opts_.weight_decay * values[j];
        values[j] = static_cast<T>(static_cast<double>(values[j]) - lr * update);
      }
    }
  }

  std::size_t steps() const { return step_; }
  const AdamWOptions& options() const { return opts_; }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& [name, p] : params_) out.push_back(p);
    return out;
  }

  std::vector<NamedArray> export_state() const {
    std::vector<NamedArray> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.push_back({"m." + params_[i].first, params_[i].second.dims(), m_[i]});
      out.push_back({"v." + params_[i].first, params_[i].second.dims(), v_[i]});
    }
    return out;
  }

  void import_state(std::size_t step, const std::vector<NamedArray>& state) {
    if (state.size() != 2 * params_.size()) fail(ErrorKind::kCheckpointMismatch, "optimiser state size");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& m = state[2 * i];
      const auto& v = state[2 * i + 1];
      if (m.name != "m." + params_[i].first || v.name != "v." + params_[i].first ||
          m.values.size() != params_[i].second.size() || v.values.size() != params_[i].second.size()) {
        fail(ErrorKind::kCheckpointMismatch, "optimiser state for " + params_[i].first);
      }
      m_[i] = m.values;
      v_[i] = v.values;
    }
    step_ = step;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  AdamWOptions opts_;
  std::vector<std::vector<float>> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace damer::train
