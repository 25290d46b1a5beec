// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dsagl/data.hpp"
#include "dsagl/dualstream.hpp"

namespace dsagl {

/// Mann-Whitney statistic: fraction of (positive, negative) pairs ranked
/// correctly, ties counted 1/2. Throws SingleClassError on one-class labels.
double auc(std::span<const double> scores, std::span<const int> labels);

struct MetricsReport {
  double instance_auc = 0.5;
  double bag_auc = 0.5;
  std::size_t bags = 0;
  std::size_t instances = 0;

  static const char* csv_header() { return "instance_auc,bag_auc,bags,instances"; }
  std::string csv_row() const;
  std::string table() const;
};

/// Per-bag outputs of a model in eval mode.
struct Predictions {
  std::vector<double> bag_scores;
  std::vector<int> bag_labels;
  std::vector<double> instance_scores;  // student p1, pooled over bags
  std::vector<int> instance_labels;
  std::vector<std::vector<double>> attention;  // teacher weights per bag
};

Predictions predict(const DsaglModel& model, const BagDataset& ds);
MetricsReport report(const Predictions& p);
MetricsReport evaluate(const DsaglModel& model, const BagDataset& ds);

/// Encoder features of one bag in eval mode, [N,d].
Tensor encode_bag(const DsaglModel& model, const Bag& bag);

}  // namespace dsagl
