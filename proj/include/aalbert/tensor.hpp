// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

// Dense tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a graph node. Operations that receive at
// least one input requiring gradients record their inputs and a backward rule
// on the produced node; backward() then orders the reachable nodes
// topologically and runs the rules in reverse. Leaf gradients accumulate, so a
// parameter consumed by several operations receives the sum of every use.
//
// Tensors produced by operations are never mutated. Leaves (parameters) are
// updated in place by the optimizer between steps.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace aalbert {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until populated
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Returns the gradient buffer, zero-filling it on first access.
  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.at(1); }

  std::span<const T> values() const { return node_->value; }
  // In-place access for leaves only (optimizer updates, weight loading).
  std::span<T> mutable_values();
  T item() const;
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->backward == nullptr; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // New leaf holding a copy of the values, detached from any graph.
  Tensor detach(bool requires_grad = false) const;

  // Identity of the underlying node; equal ids mean the same storage.
  const void* id() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  static Tensor from_node(std::shared_ptr<Node<T>> node);

 private:
  std::shared_ptr<Node<T>> node_;
};

// Gradient recording is enabled per thread; NoGradGuard disables it for the
// current scope (feature extraction, evaluation).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Recorded operations reachable from a root, in topological order: every
// entry's inputs appear before it.
template <typename T>
class Tape {
 public:
  static Tape build(const Tensor<T>& root);

  const std::vector<Node<T>*>& entries() const { return entries_; }
  bool is_topologically_ordered() const;

 private:
  std::vector<Node<T>*> entries_;
};

// Populates gradients of every reachable tensor that requires them. The root
// must hold exactly one element.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace aalbert
