// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dsagl/tensor.hpp"

namespace dsagl {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  std::function<void(Node&)> backward;

  /// Gradient buffer, zero-initialised on first use.
  Tensor& grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape(), 0.0);
    return grad;
  }
};

/// Shared handle to a value on (or feeding) the tape.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Accumulated gradient; zeros if nothing has flowed in yet.
  const Tensor& grad() const { return node_->grad_buffer(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(0.0);
  }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// Trainable leaf.
Var parameter(Tensor value);
/// Leaf that never receives gradients.
Var constant(Tensor value);

/// Ordered record of executed differentiable operations.
class Graph {
 public:
  using BackwardFn = std::function<void(Node&)>;

  Graph() = default;
  /// A non-recording graph evaluates ops without taping anything, so every
  /// result is a constant (used for eval passes and stop-gradient).
  explicit Graph(bool record) : record_(record) {}
  bool recording() const noexcept { return record_; }

  /// Records an op result when any input needs a gradient; otherwise the
  /// result is a plain constant and nothing is taped.
  Var apply(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var apply(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  /// Reverse replay from a scalar loss. Leaf gradients accumulate across
  /// calls; interior gradients are reset on entry.
  void backward(const Var& loss);

  std::size_t size() const noexcept { return tape_.size(); }
  void clear() noexcept { tape_.clear(); }

 private:
  std::vector<std::shared_ptr<Node>> tape_;
  bool record_ = true;
};

/// Central-difference gradient check of a scalar function of one tensor.
/// Returns max_i |analytic_i - fd_i| / max(1, |analytic_i|).
double finite_diff_check(const std::function<Var(Graph&, const Var&)>& f, const Tensor& x,
                         double eps);

/// Same check over the values of existing parameters, perturbed in place and
/// restored afterwards. Only params[i] are probed; `loss` must read them.
double finite_diff_check_params(const std::function<Var(Graph&)>& loss, std::span<const Var> params,
                                double eps);

}  // namespace dsagl
