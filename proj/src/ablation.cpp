// SPDX-License-Identifier: Apache-2.0
#include "dsagl/ablation.hpp"

#include <algorithm>
#include <cstdio>

#include "dsagl/error.hpp"
#include "dsagl/rng.hpp"
#include "dsagl/training.hpp"

namespace dsagl {

const char* to_string(AblationSuite s) { return s == AblationSuite::loss ? "loss" : "architecture"; }

AblationSuite parse_ablation_suite(const std::string& s) {
  if (s == "architecture") return AblationSuite::architecture;
  if (s == "loss") return AblationSuite::loss;
  throw ConfigError("unknown ablation suite '" + s + "' (expected architecture or loss)");
}

std::vector<std::string> ablation_columns(AblationSuite suite) {
  if (suite == AblationSuite::architecture) return {"Dual-stream", "FASA", "L_Hybrid", "VSSMamba"};
  return {"Weighted BCE", "KL", "Pseudo-label"};
}

std::vector<AblationRow> ablation_rows(AblationSuite suite, const TrainConfig& base) {
  std::vector<AblationRow> rows;
  auto add = [&](std::string name, std::vector<std::string> marks, auto&& edit) {
    TrainConfig c = base;
    edit(c);
    rows.push_back({std::move(name), std::move(marks), c});
  };
  const std::string y = "x", n = "";
  if (suite == AblationSuite::architecture) {
    add("full", {y, y, y, y}, [](TrainConfig&) {});
    add("no_dual_stream", {n, y, y, y}, [](TrainConfig& c) { c.model.dual_stream = false; });
    add("no_fasa", {y, n, y, y}, [](TrainConfig& c) { c.model.use_fasa = false; });
    add("no_hybrid", {y, y, n, y}, [](TrainConfig& c) { c.loss.alpha = 1.0; });
    add("no_mamba", {y, y, y, n}, [](TrainConfig& c) { c.model.encoder.mamba_depth = 0; });
    return rows;
  }
  // Weighted rows keep the base w_n; unweighted rows use equal weights.
  add("full", {y, y, "soft"}, [](TrainConfig&) {});
  add("no_kl", {y, n, "soft"}, [](TrainConfig& c) { c.loss.alpha = 1.0; });
  add("no_kl_unweighted", {n, n, "soft"}, [](TrainConfig& c) {
    c.loss.alpha = 1.0;
    c.loss.w_n = 0.5;
  });
  add("hard", {y, y, "hard"}, [](TrainConfig& c) { c.loss.mode = PseudoLabelMode::hard; });
  add("random", {y, n, "random"}, [](TrainConfig& c) {
    c.loss.alpha = 1.0;
    c.loss.mode = PseudoLabelMode::random;
  });
  add("ground_truth", {y, n, "ground_truth"}, [](TrainConfig& c) {
    c.loss.alpha = 1.0;
    c.loss.mode = PseudoLabelMode::ground_truth;
  });
  return rows;
}

AblationBenchmark AblationBenchmark::standard() {
  AblationBenchmark b;
  b.data.num_bags = 40;
  b.data.bag_size = 10;
  b.data.blob_amplitude = 1.5;
  b.data.amplitude_spread = 0.8;
  b.eval_bags = 100;
  b.base.epochs = 15;
  b.base.teacher_update_interval = 1;
  return b;
}

std::pair<BagDataset, BagDataset> ablation_data(const AblationBenchmark& bench, std::uint64_t seed) {
  SyntheticConfig tr = bench.data;
  tr.seed = seed;
  SyntheticConfig ev = bench.data;
  ev.seed = mix_seed(seed, 99);
  ev.num_bags = bench.eval_bags;
  return {gen_synthetic_bags(tr), gen_synthetic_bags(ev)};
}

MetricsReport run_ablation_cell(const TrainConfig& cfg, const BagDataset& train, const BagDataset& eval) {
  Trainer t(cfg, train, &eval);
  for (std::size_t e = 0; e < cfg.epochs; ++e) t.epoch(false);
  return evaluate(t.model(), eval);
}

AblationResult run_ablation(AblationSuite suite, const AblationBenchmark& bench, const std::vector<std::uint64_t>& seeds,
                            const AblationProgress& progress) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  AblationResult r;
  r.suite = suite;
  r.columns = ablation_columns(suite);
  r.rows = ablation_rows(suite, bench.base);
  r.cells.assign(r.rows.size(), {});
  for (auto seed : seeds) {
    auto [train, eval] = ablation_data(bench, seed);
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
      TrainConfig c = r.rows[i].config;
      c.seed = seed;
      c.out_dir.clear();
      AblationCell cell{seed, run_ablation_cell(c, train, eval)};
      if (progress) progress(r.rows[i], cell);
      r.cells[i].push_back(cell);
    }
  }
  return r;
}

double AblationResult::mean_instance_auc(std::size_t row) const {
  double s = 0.0;
  for (const auto& c : cells.at(row)) s += c.metrics.instance_auc;
  return cells[row].empty() ? 0.0 : s / static_cast<double>(cells[row].size());
}

double AblationResult::mean_bag_auc(std::size_t row) const {
  double s = 0.0;
  for (const auto& c : cells.at(row)) s += c.metrics.bag_auc;
  return cells[row].empty() ? 0.0 : s / static_cast<double>(cells[row].size());
}

std::string AblationResult::table() const {
  std::vector<std::string> head = columns;
  head.insert(head.begin(), "Row");
  head.push_back("Instance AUC");
  head.push_back("Bag AUC");
  std::vector<std::vector<std::string>> body;
  char buf[32];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<std::string> line{rows[i].name};
    line.insert(line.end(), rows[i].marks.begin(), rows[i].marks.end());
    std::snprintf(buf, sizeof buf, "%.4f", mean_instance_auc(i));
    line.push_back(buf);
    std::snprintf(buf, sizeof buf, "%.4f", mean_bag_auc(i));
    line.push_back(buf);
    body.push_back(std::move(line));
  }
  std::vector<std::size_t> width(head.size());
  for (std::size_t c = 0; c < head.size(); ++c) {
    width[c] = head[c].size();
    for (const auto& l : body) width[c] = std::max(width[c], l[c].size());
  }
  auto emit = [&](const std::vector<std::string>& l) {
    std::string s;
    for (std::size_t c = 0; c < l.size(); ++c) {
      if (c) s += "  ";
      s += l[c] + std::string(width[c] - l[c].size(), ' ');
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s + "\n";
  };
  std::string out = emit(head);
  for (const auto& l : body) out += emit(l);

  out += "\nper-seed instance AUC\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out += rows[i].name + ":";
    for (const auto& c : cells[i]) {
      std::snprintf(buf, sizeof buf, " %llu=%.4f", static_cast<unsigned long long>(c.seed), c.metrics.instance_auc);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::string AblationResult::to_csv() const {
  std::string out = "row,seed,instance_auc,bag_auc\n";
  char buf[128];
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (const auto& c : cells[i]) {
      std::snprintf(buf, sizeof buf, ",%llu,%.17g,%.17g\n", static_cast<unsigned long long>(c.seed),
                    c.metrics.instance_auc, c.metrics.bag_auc);
      out += rows[i].name + buf;
    }
  return out;
}

}  // namespace dsagl
