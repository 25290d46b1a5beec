// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dsagl/config.hpp"
#include "dsagl/data.hpp"
#include "dsagl/metrics.hpp"

namespace dsagl {

enum class AblationSuite { architecture, loss };

const char* to_string(AblationSuite s);
AblationSuite parse_ablation_suite(const std::string& s);

/// One configuration of a suite. `marks` fills the component columns.
struct AblationRow {
  std::string name;
  std::vector<std::string> marks;
  TrainConfig config;
};

/// Rows derived from `base`; the first row is always the full model.
std::vector<std::string> ablation_columns(AblationSuite suite);
std::vector<AblationRow> ablation_rows(AblationSuite suite, const TrainConfig& base);

/// Smaller benchmark than the training default so a suite finishes in
/// minutes; every cell regenerates train and eval data from its seed.
struct AblationBenchmark {
  SyntheticConfig data;
  std::size_t eval_bags = 100;
  TrainConfig base;

  static AblationBenchmark standard();
};

struct AblationCell {
  std::uint64_t seed = 0;
  MetricsReport metrics;
};

struct AblationResult {
  AblationSuite suite = AblationSuite::architecture;
  std::vector<std::string> columns;
  std::vector<AblationRow> rows;
  std::vector<std::vector<AblationCell>> cells;  // [row][seed]

  double mean_instance_auc(std::size_t row) const;
  double mean_bag_auc(std::size_t row) const;
  /// Aligned comparison table (rows by configuration) plus
  /// per-seed instance AUCs.
  std::string table() const;
  /// row,seed,instance_auc,bag_auc
  std::string to_csv() const;
};

/// Train and eval sets for one seed of the benchmark.
std::pair<BagDataset, BagDataset> ablation_data(const AblationBenchmark& bench, std::uint64_t seed);

/// Trains one row on one seed and evaluates once at the end.
MetricsReport run_ablation_cell(const TrainConfig& cfg, const BagDataset& train, const BagDataset& eval);

using AblationProgress = std::function<void(const AblationRow&, const AblationCell&)>;

AblationResult run_ablation(AblationSuite suite, const AblationBenchmark& bench, const std::vector<std::uint64_t>& seeds,
                            const AblationProgress& progress = {});

}  // namespace dsagl
