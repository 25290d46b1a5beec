// SPDX-License-Identifier: Apache-2.0
#include "dsagl/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "dsagl/error.hpp"

namespace dsagl {

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var Graph::apply(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return apply(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Graph::apply(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  if (!record_) return constant(std::move(value));
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v.requires_grad(); });
  if (!needs) return constant(std::move(value));
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->backward = std::move(fn);
  tape_.push_back(n);
  return Var(std::move(n));
}

void Graph::backward(const Var& loss) {
  if (!loss) throw ShapeError("backward: null loss");
  if (loss.value().size() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  for (auto& n : tape_)
    if (!n->grad.empty()) n->grad.fill(0.0);
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    Node& n = **it;
    if (n.grad.empty() || !n.backward) continue;
    n.backward(n);
  }
}

namespace {

double eval_value(const std::function<Var(Graph&)>& loss) {
  Graph g;
  return loss(g).value().item();
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

}  // namespace

double finite_diff_check(const std::function<Var(Graph&, const Var&)>& f, const Tensor& x,
                         double eps) {
  Var leaf = parameter(x);
  return finite_diff_check_params([&](Graph& g) { return f(g, leaf); },
                                  std::span<const Var>(&leaf, 1), eps);
}

double finite_diff_check_params(const std::function<Var(Graph&)>& loss, std::span<const Var> params,
                                double eps) {
  if (!(eps > 0.0)) throw ShapeError("finite_diff_check: eps must be positive");
  const double f0 = eval_value(loss);
  const double f1 = eval_value(loss);
  if (!(f0 == f1))
    throw NumericError("finite_diff_check: function is not deterministic (" +
                       std::to_string(f0) + " vs " + std::to_string(f1) + ")");

  std::vector<Tensor> analytic;
  {
    for (auto p : params) p.zero_grad();
    Graph g;
    Var l = loss(g);
    g.backward(l);
    for (const auto& p : params) analytic.push_back(p.grad());
  }

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Var p = params[k];
    Tensor& v = p.mutable_value();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + eps;
      const double up = eval_value(loss);
      v[i] = orig - eps;
      const double down = eval_value(loss);
      v[i] = orig;
      worst = std::max(worst, relative_error(analytic[k][i], (up - down) / (2.0 * eps)));
    }
  }
  return worst;
}

}  // namespace dsagl
