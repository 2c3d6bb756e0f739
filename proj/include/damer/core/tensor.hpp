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
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "damer/core/error.hpp"

namespace damer {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& dims) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) out << (i ? " x " : "") << dims[i];
  out << ']';
  return out.str();
}

/// Graph recording switch. Evaluation passes disable it so no parents or
/// closures are kept alive.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Shape dims;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Receives this node's upstream gradient and accumulates into parents.
  std::function<void(const std::vector<T>&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T{0});
    return grad;
  }
};

/// Shared handle to a graph node. Copies alias the same storage; parameters
/// are long-lived leaves, everything else lives as long as the loss that
/// references it.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  static Tensor constant(Shape dims, std::vector<T> data) {
    return leaf(std::move(dims), std::move(data), false);
  }
  static Tensor zeros(Shape dims) {
    const auto n = shape_size(dims);
    return leaf(std::move(dims), std::vector<T>(n, T{0}), false);
  }
  static Tensor parameter(Shape dims, std::vector<T> data) {
    return leaf(std::move(dims), std::move(data), true);
  }
  static Tensor scalar(T v) { return constant({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& dims() const { return node_->dims; }
  std::size_t dim(std::size_t axis) const { return node_->dims.at(axis); }
  std::size_t rank() const { return node_->dims.size(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }

  std::span<const T> values() const { return node_->value; }
  /// Direct write access; only meaningful for leaves (parameters, inputs).
  std::span<T> mutable_values() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }

  /// Empty span until a backward pass has reached this node.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), T{0}); }

  T item() const {
    if (size() != 1) fail(ErrorKind::kShapeMismatch, "item() on tensor of shape " + shape_str(dims()));
    return node_->value[0];
  }
  T operator[](std::size_t i) const { return node_->value[i]; }

  /// Same values, cut from the graph.
  Tensor detach() const { return constant(node_->dims, node_->value); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared_node() const { return node_; }

 private:
  static Tensor leaf(Shape dims, std::vector<T> data, bool requires_grad) {
    if (shape_size(dims) != data.size()) {
      fail(ErrorKind::kShapeMismatch,
           "data length " + std::to_string(data.size()) + " does not match " + shape_str(dims));
    }
    Tensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->dims = std::move(dims);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  template <typename U>
  friend Tensor<U> make_result(const char*, Shape, std::vector<U>, std::vector<Tensor<U>>,
                               std::function<void(const std::vector<U>&)>);

  std::shared_ptr<Node<T>> node_;
};

template <typename T>
void check_finite(const char* op, std::span<const T> values) {
  for (const T v : values) {
    if (!std::isfinite(v)) fail(ErrorKind::kNonFinite, std::string("non-finite value produced by ") + op);
  }
}

/// Builds an op result. The backward closure is only stored when grad mode
/// is on and some input requires a gradient.
template <typename T>
Tensor<T> make_result(const char* op, Shape dims, std::vector<T> value, std::vector<Tensor<T>> inputs,
                      std::function<void(const std::vector<T>&)> backward) {
  check_finite<T>(op, value);
  Tensor<T> out;
  out.node_ = std::make_shared<Node<T>>();
  out.node_->dims = std::move(dims);
  out.node_->value = std::move(value);
  out.node_->op = op;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
  if (needs && GradMode::enabled()) {
    out.node_->requires_grad = true;
    for (auto& in : inputs) {
      if (in.defined()) out.node_->parents.push_back(in.shared_node());
    }
    out.node_->backward = std::move(backward);
  }
  return out;
}

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls
/// until zeroed.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) fail(ErrorKind::kShapeMismatch, "backward() needs a scalar, got " + shape_str(loss.dims()));
  if (!loss.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, bool>> stack{{loss.node(), false}};
  while (!stack.empty()) {
    auto [node, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(node);
      continue;
    }
    if (!seen.insert(node).second) continue;
    stack.emplace_back(node, true);
    for (const auto& parent : node->parents) {
      if (parent->requires_grad && !seen.count(parent.get())) stack.emplace_back(parent.get(), false);
    }
  }

  loss.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && node->grad.size() == node->value.size()) node->backward(node->grad);
  }
}

}  // namespace damer
