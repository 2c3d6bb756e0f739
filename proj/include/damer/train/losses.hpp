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
#include <string>
#include <vector>

#include "damer/core/error.hpp"
#include "damer/core/ops.hpp"
#include "damer/model/dsaf.hpp"
#include "damer/train/config.hpp"

namespace damer::train {

/// Sum of the three heads' batch-mean cross-entropies at temperature 1.
/// Rows with label < 0 are ignored; undefined when no row is labelled.
template <typename T>
Tensor<T> classification_loss(const model::BranchOutputs<T>& out, const std::vector<int>& labels) {
  std::vector<T> weights(labels.size(), T{0});
  std::vector<int> safe(labels.size(), 0);
  std::size_t counted = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    if (labels[i] > 1) fail(ErrorKind::kShapeMismatch, "classification_loss: label out of range");
    safe[i] = labels[i];
    weights[i] = T{1};
    ++counted;
  }
  if (counted == 0) return {};
  const T denom = static_cast<T>(counted);
  auto head = [&](const Tensor<T>& logits) {
    return weighted_sum(nll_rows(log_softmax(logits, T{1}), safe), weights, denom);
  };
  return combine_scalars<T>({head(out.logits_mel), head(out.logits_coch), head(out.logits_fuse)}, {T{1}, T{1}, T{1}});
}

/// Batch mean of per-row Jensen-Shannon divergence between the branch
/// distributions.
template <typename T>
Tensor<T> consistency_loss(const Tensor<T>& p_mel, const Tensor<T>& p_coch) {
  return mean(js_divergence_rows(p_mel, p_coch));
}

struct LossComponents {
  double cls = 0.0;
  double pl = 0.0;
  double cons = 0.0;
  double cont = 0.0;
};

/// Plain weighted sum; throws NonFiniteLoss on any non-finite input.
inline double total_loss(const LossComponents& c, const LossWeights& w = {}) {
  for (const double v : {c.cls, c.pl, c.cons, c.cont}) {
    if (!std::isfinite(v)) fail(ErrorKind::kNonFiniteLoss, "non-finite loss component");
  }
  const double total = w.lambda_cls * c.cls + w.lambda_pl * c.pl + w.lambda_cons * c.cons + w.lambda_cont * c.cont;
  if (!std::isfinite(total)) fail(ErrorKind::kNonFiniteLoss, "non-finite total loss");
  return total;
}

/// Differentiable weighted sum; undefined components (disabled modules)
/// contribute 0.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& cls, const Tensor<T>& pl, const Tensor<T>& cons, const Tensor<T>& cont,
                     const LossWeights& w = {}) {
  try {
    return combine_scalars<T>({cls, pl, cons, cont},
                              {static_cast<T>(w.lambda_cls), static_cast<T>(w.lambda_pl),
                               static_cast<T>(w.lambda_cons), static_cast<T>(w.lambda_cont)});
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kNonFinite) fail(ErrorKind::kNonFiniteLoss, e.what());
    throw;
  }
}

}  // namespace damer::train
