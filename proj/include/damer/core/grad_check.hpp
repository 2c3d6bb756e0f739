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
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "damer/core/error.hpp"
#include "damer/core/tensor.hpp"

namespace damer {

struct GradReport {
  std::string op_name;
  double max_rel_error = 0.0;
  std::vector<double> per_input;  // max relative error per input tensor
};

/// Scalar-valued computation over a list of 64-bit inputs.
using CheckedFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of `fn` against central differences.
/// Relative error per entry is |a - n| / max(|a|, |n|, floor); an exact 0/0
/// is 0. The floor is the larger of `abs_floor` and the rounding noise of the
/// difference quotient (eps * |f| / step) scaled by 1e6, so entries whose true
/// gradient is zero are not scored on cancellation noise alone. `fn` must be
/// deterministic across calls.
inline GradReport gradient_check(const std::string& op_name, const CheckedFn& fn, std::vector<Tensor<double>> inputs,
                                 double step = 1e-4, double abs_floor = 1e-8) {
  if (step < 1e-5 || step > 1e-3) fail(ErrorKind::kConfigError, "gradient_check step must lie in [1e-5, 1e-3]");

  for (auto& in : inputs) in.zero_grad();
  const Tensor<double> loss = fn(inputs);
  backward(loss);

  constexpr double kEps = std::numeric_limits<double>::epsilon();
  constexpr double kNoiseHeadroom = 1e6;
  GradReport report;
  report.op_name = op_name;
  for (auto& in : inputs) {
    const std::vector<double> analytic(in.grad().begin(), in.grad().end());
    double worst = 0.0;
    auto values = in.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus = 0.0;
      double minus = 0.0;
      {
        NoGradGuard no_grad;
        values[i] = saved + step;
        plus = fn(inputs).item();
        values[i] = saved - step;
        minus = fn(inputs).item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double diff = std::abs(analytic[i] - numeric);
      if (diff == 0.0) continue;
      const double noise = kEps * std::max(std::abs(plus), std::abs(minus)) / step;
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), abs_floor, kNoiseHeadroom * noise});
      worst = std::max(worst, diff / denom);
    }
    report.per_input.push_back(worst);
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  return report;
}

}  // namespace damer
