// SPDX-License-Identifier: Apache-2.0
#include "dsagl/dsagl.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <new>
#include <string>

#include "dsagl/ablation.hpp"
#include "dsagl/config.hpp"
#include "dsagl/data.hpp"
#include "dsagl/error.hpp"
#include "dsagl/export.hpp"
#include "dsagl/metrics.hpp"
#include "dsagl/training.hpp"

struct dsagl_dataset {
  dsagl::BagDataset ds;
};

struct dsagl_model {
  dsagl::TrainConfig config;
  std::unique_ptr<dsagl::DsaglModel> model;
};

namespace {

thread_local std::string g_last_error;

template <class F>
int guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return DSAGL_OK;
  } catch (const dsagl::Error& e) {
    g_last_error = e.what();
    return static_cast<int>(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return DSAGL_E_NUMERIC;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return DSAGL_E_DATA;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DSAGL_E_USAGE;
  }
}

void need(const void* p, const char* what) {
  if (!p) throw dsagl::ConfigError(std::string(what) + " must not be NULL");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc);
  if (!(f << text)) throw dsagl::DataError("cannot write '" + p.string() + "'");
}

dsagl::SyntheticConfig to_core(const dsagl_synthetic_config& c) {
  dsagl::SyntheticConfig s;
  s.num_bags = c.num_bags;
  s.bag_size = c.bag_size;
  s.positive_ratio = c.positive_ratio;
  s.negative_class_count = c.negative_class_count;
  s.patch_side = c.patch_side;
  s.channels = c.channels;
  s.noise_sigma = c.noise_sigma;
  s.blob_radius = c.blob_radius;
  s.blob_amplitude = c.blob_amplitude;
  s.amplitude_spread = c.amplitude_spread;
  s.seed = c.seed;
  return s;
}

dsagl::MetricsReport to_core(const dsagl_metrics& m) {
  dsagl::MetricsReport r;
  r.instance_auc = m.instance_auc;
  r.bag_auc = m.bag_auc;
  r.bags = m.bags;
  r.instances = m.instances;
  return r;
}

}  // namespace

extern "C" {

const char* dsagl_last_error(void) { return g_last_error.c_str(); }

const char* dsagl_version(void) { return "0.1.0"; }

void dsagl_string_free(char* s) { std::free(s); }

void dsagl_synthetic_defaults(dsagl_synthetic_config* cfg) {
  if (!cfg) return;
  const dsagl::SyntheticConfig s;
  *cfg = {s.num_bags,    s.bag_size,       s.positive_ratio,   s.negative_class_count,
          s.patch_side,  s.channels,       s.noise_sigma,      s.blob_radius,
          s.blob_amplitude, s.amplitude_spread, s.seed};
}

int dsagl_dataset_generate(const dsagl_synthetic_config* cfg, dsagl_dataset** out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out, "out");
    auto h = std::make_unique<dsagl_dataset>();
    h->ds = dsagl::gen_synthetic_bags(to_core(*cfg));
    *out = h.release();
  });
}

int dsagl_dataset_load(const char* path, dsagl_dataset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto h = std::make_unique<dsagl_dataset>();
    h->ds = dsagl::load_dataset(path);
    *out = h.release();
  });
}

int dsagl_dataset_save(const dsagl_dataset* ds, const char* path) {
  return guarded([&] {
    need(ds, "dataset");
    need(path, "path");
    dsagl::save_dataset(ds->ds, path);
  });
}

int dsagl_dataset_summary(const dsagl_dataset* ds, char** out) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    *out = dup(dsagl::dataset_summary(ds->ds));
  });
}

int dsagl_dataset_bag_count(const dsagl_dataset* ds, uint64_t* out) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    *out = ds->ds.bags.size();
  });
}

int dsagl_dataset_bag_info(const dsagl_dataset* ds, uint64_t bag_id, uint64_t* size, int* label) {
  return guarded([&] {
    need(ds, "dataset");
    const auto& b = ds->ds.bags[ds->ds.index_of(bag_id)];
    if (size) *size = b.size();
    if (label) *label = b.label;
  });
}

void dsagl_dataset_free(dsagl_dataset* ds) { delete ds; }

int dsagl_config_resolve(const char* text, char** resolved) {
  return guarded([&] {
    need(text, "config text");
    const dsagl::TrainConfig cfg = dsagl::parse_config(text);
    if (resolved) *resolved = dup(dsagl::config_to_text(cfg));
  });
}

int dsagl_train(const char* config_text, const dsagl_dataset* train, const dsagl_dataset* eval, const char* out_dir,
                dsagl_model** out_model, char** log_csv) {
  return guarded([&] {
    need(config_text, "config text");
    need(train, "train dataset");
    dsagl::TrainConfig cfg = dsagl::parse_config(config_text);
    if (out_dir) cfg.out_dir = out_dir;
    if (!cfg.out_dir.empty()) {
      std::filesystem::create_directories(cfg.out_dir);
      write_text(std::filesystem::path(cfg.out_dir) / "config.txt", dsagl::config_to_text(cfg));
    }
    dsagl::TrainResult r = dsagl::train(cfg, train->ds, eval ? &eval->ds : nullptr);
    if (!cfg.out_dir.empty()) {
      const dsagl::MetricsReport m = dsagl::evaluate(*r.model, eval ? eval->ds : train->ds);
      write_text(std::filesystem::path(cfg.out_dir) / "metrics.txt",
                 std::string(dsagl::MetricsReport::csv_header()) + "\n" + m.csv_row() + "\n");
    }
    if (log_csv) *log_csv = dup(r.log.to_csv());
    if (out_model) {
      auto h = std::make_unique<dsagl_model>();
      h->config = cfg;
      h->model = std::move(r.model);
      *out_model = h.release();
    }
  });
}

int dsagl_model_load(const char* path, dsagl_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    dsagl::LoadedModel lm = dsagl::load_checkpoint(path);
    auto h = std::make_unique<dsagl_model>();
    h->config = lm.config;
    h->model = std::move(lm.model);
    *out = h.release();
  });
}

int dsagl_model_save(const dsagl_model* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    dsagl::save_checkpoint(*model->model, model->config, path);
  });
}

int dsagl_model_config(const dsagl_model* model, char** out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    *out = dup(dsagl::config_to_text(model->config));
  });
}

void dsagl_model_free(dsagl_model* model) { delete model; }

int dsagl_evaluate(const dsagl_model* model, const dsagl_dataset* ds, dsagl_metrics* out) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    need(out, "out");
    const dsagl::MetricsReport m = dsagl::evaluate(*model->model, ds->ds);
    *out = {m.instance_auc, m.bag_auc, m.bags, m.instances};
  });
}

int dsagl_metrics_format(const dsagl_metrics* m, int csv, char** out) {
  return guarded([&] {
    need(m, "metrics");
    need(out, "out");
    const dsagl::MetricsReport r = to_core(*m);
    *out = dup(csv ? std::string(dsagl::MetricsReport::csv_header()) + "\n" + r.csv_row() + "\n" : r.table());
  });
}

int dsagl_bag_attention(const dsagl_model* model, const dsagl_dataset* ds, uint64_t bag_id, double* weights,
                        size_t cap, size_t* n) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    const dsagl::BagAttention a = dsagl::bag_attention(*model->model, ds->ds.bags[ds->ds.index_of(bag_id)]);
    if (n) *n = a.weights.size();
    if (weights)
      for (std::size_t j = 0; j < a.weights.size() && j < cap; ++j) weights[j] = a.weights[j];
  });
}

int dsagl_export_attention(const dsagl_model* model, const dsagl_dataset* ds, const uint64_t* bag_ids, size_t count,
                           const char* dir) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    need(bag_ids, "bag ids");
    need(dir, "dir");
    dsagl::export_attention(*model->model, ds->ds, std::span<const std::uint64_t>(bag_ids, count), dir);
  });
}

void dsagl_ablation_defaults(dsagl_ablation_options* opt) {
  if (!opt) return;
  const dsagl::AblationBenchmark b = dsagl::AblationBenchmark::standard();
  *opt = {b.data.num_bags, b.data.bag_size, b.data.positive_ratio, b.data.blob_amplitude, b.data.amplitude_spread,
          b.eval_bags};
}

int dsagl_ablate(const char* suite, const dsagl_ablation_options* opt, const char* overrides, const uint64_t* seeds,
                 size_t seed_count, char** table, char** csv) {
  return guarded([&] {
    need(suite, "suite");
    need(seeds, "seeds");
    const dsagl::AblationSuite s = dsagl::parse_ablation_suite(suite);
    dsagl::AblationBenchmark bench = dsagl::AblationBenchmark::standard();
    if (opt) {
      bench.data.num_bags = opt->num_bags;
      bench.data.bag_size = opt->bag_size;
      bench.data.positive_ratio = opt->positive_ratio;
      bench.data.blob_amplitude = opt->blob_amplitude;
      bench.data.amplitude_spread = opt->amplitude_spread;
      bench.eval_bags = opt->eval_bags;
    }
    bench.data.validate();
    if (overrides) bench.base = dsagl::parse_config_over(bench.base, overrides);
    const dsagl::AblationResult r =
        dsagl::run_ablation(s, bench, std::vector<std::uint64_t>(seeds, seeds + seed_count));
    if (table) *table = dup(r.table());
    if (csv) *csv = dup(r.to_csv());
  });
}

}  // extern "C"
