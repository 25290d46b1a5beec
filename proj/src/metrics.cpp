// SPDX-License-Identifier: Apache-2.0
#include "dsagl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dsagl/error.hpp"
#include "dsagl/ops.hpp"

namespace dsagl {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ShapeError("auc: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(y);
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw SingleClassError("auc: labels contain a single class (" + std::to_string(n_pos) + " positive, " +
                           std::to_string(n_neg) + " negative)");
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericError("auc: non-finite score");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of mid-ranks of positives; ranks are 1-based and half-integers are exact.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]]) rank_sum += mid;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

std::string MetricsReport::csv_row() const {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%zu,%zu", instance_auc, bag_auc, bags, instances);
  return buf;
}

std::string MetricsReport::table() const {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "metric        value\n"
                "instance_auc  %.4f\n"
                "bag_auc       %.4f\n"
                "bags          %zu\n"
                "instances     %zu\n",
                instance_auc, bag_auc, bags, instances);
  return buf;
}

Tensor encode_bag(const DsaglModel& model, const Bag& bag) {
  return model.encoder().encode(bag.instances);
}

Predictions predict(const DsaglModel& model, const BagDataset& ds) {
  Predictions p;
  for (const auto& bag : ds.bags) {
    Graph g(false);
    Var x = constant(encode_bag(model, bag));
    Tensor probs = model.student_probs(g, x).value();
    double max_p1 = 0.0;
    for (std::size_t j = 0; j < bag.size(); ++j) {
      p.instance_scores.push_back(probs[2 * j + 1]);
      p.instance_labels.push_back(bag.instance_labels[j]);
      max_p1 = std::max(max_p1, probs[2 * j + 1]);
    }
    auto t = model.teacher_forward(g, x);
    p.attention.emplace_back(t.weights.value().data().begin(), t.weights.value().data().end());
    p.bag_scores.push_back(model.config().dual_stream ? t.y_hat.value().item() : max_p1);
    p.bag_labels.push_back(bag.label);
  }
  return p;
}

MetricsReport report(const Predictions& p) {
  MetricsReport r;
  r.bags = p.bag_scores.size();
  r.instances = p.instance_scores.size();
  r.bag_auc = auc(p.bag_scores, p.bag_labels);
  r.instance_auc = auc(p.instance_scores, p.instance_labels);
  return r;
}

MetricsReport evaluate(const DsaglModel& model, const BagDataset& ds) { return report(predict(model, ds)); }

}  // namespace dsagl
