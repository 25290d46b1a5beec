// SPDX-License-Identifier: Apache-2.0
// Command-line front end over the C API.
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dsagl/dsagl.h"

namespace {

struct Failure {
  int code;
};

void check(int status) {
  if (status != DSAGL_OK) {
    std::fprintf(stderr, "error: %s\n", dsagl_last_error());
    throw Failure{status};
  }
}

std::string take(char* s) {
  std::string out = s ? s : "";
  dsagl_string_free(s);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::fprintf(stderr, "error: cannot open '%s'\n", path.c_str());
    throw Failure{DSAGL_E_DATA};
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!(out << text)) {
    std::fprintf(stderr, "error: cannot write '%s'\n", path.c_str());
    throw Failure{DSAGL_E_DATA};
  }
}

// Value of a key in resolved config text, "" when absent.
std::string config_value(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string k = line.substr(0, eq);
    while (!k.empty() && k.back() == ' ') k.pop_back();
    if (k != key) continue;
    std::string v = line.substr(eq + 1);
    const auto b = v.find_first_not_of(' ');
    return b == std::string::npos ? "" : v.substr(b);
  }
  return "";
}

struct Dataset {
  dsagl_dataset* h = nullptr;
  ~Dataset() { dsagl_dataset_free(h); }
};

struct Model {
  dsagl_model* h = nullptr;
  ~Model() { dsagl_model_free(h); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DSAGL weakly supervised MIL on synthetic bags"};
  app.require_subcommand(1);

  dsagl_synthetic_config gen;
  dsagl_synthetic_defaults(&gen);
  std::string gen_out;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic bag dataset");
  g->add_option("--bags", gen.num_bags, "Number of bags (even)")->capture_default_str();
  g->add_option("--bag-size", gen.bag_size, "Instances per bag")->capture_default_str();
  g->add_option("--ratio", gen.positive_ratio, "Positive instance ratio in positive bags")->capture_default_str();
  g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  g->add_option("--classes", gen.negative_class_count, "Negative texture families")->capture_default_str();
  g->add_option("--patch-side", gen.patch_side, "Patch side in pixels")->capture_default_str();
  g->add_option("--noise", gen.noise_sigma, "Pixel noise sigma")->capture_default_str();
  g->add_option("--amplitude", gen.blob_amplitude, "Blob amplitude")->capture_default_str();
  g->add_option("--spread", gen.amplitude_spread, "Relative blob amplitude spread")->capture_default_str();
  g->add_option("--out", gen_out, "Output dataset path")->required();

  std::string train_config, train_data, train_eval, train_out;
  auto* t = app.add_subcommand("train", "Train a model and write a run directory");
  t->add_option("--config", train_config, "Config file (key = value)");
  t->add_option("--data", train_data, "Training dataset (overrides data_path)");
  t->add_option("--eval-data", train_eval, "Evaluation dataset (overrides eval_data_path)");
  t->add_option("--out", train_out, "Run directory (overrides out_dir)");

  std::string eval_ckpt, eval_data;
  bool eval_csv = false;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required();
  e->add_option("--data", eval_data, "Dataset path")->required();
  e->add_flag("--csv", eval_csv, "Print comma-separated output");

  dsagl_ablation_options abl;
  dsagl_ablation_defaults(&abl);
  std::string abl_suite, abl_config, abl_out;
  std::size_t abl_seeds = 10;
  std::uint64_t abl_first = 1;
  auto* a = app.add_subcommand("ablate", "Run an ablation suite");
  a->add_option("--suite", abl_suite, "architecture or loss")->required();
  a->add_option("--seeds", abl_seeds, "Number of seeds")->capture_default_str();
  a->add_option("--first-seed", abl_first, "First seed; seeds are consecutive")->capture_default_str();
  a->add_option("--bags", abl.num_bags, "Training bags per seed")->capture_default_str();
  a->add_option("--bag-size", abl.bag_size, "Instances per bag")->capture_default_str();
  a->add_option("--ratio", abl.positive_ratio, "Positive instance ratio")->capture_default_str();
  a->add_option("--amplitude", abl.blob_amplitude, "Blob amplitude")->capture_default_str();
  a->add_option("--spread", abl.amplitude_spread, "Relative blob amplitude spread")->capture_default_str();
  a->add_option("--eval-bags", abl.eval_bags, "Held-out bags per seed")->capture_default_str();
  a->add_option("--config", abl_config, "Config overrides applied to every row");
  a->add_option("--out", abl_out, "Directory for table.txt and cells.csv");

  std::string exp_ckpt, exp_data, exp_out;
  std::vector<std::uint64_t> exp_ids;
  auto* x = app.add_subcommand("export-attn", "Export teacher attention for bags");
  x->add_option("--checkpoint", exp_ckpt, "Checkpoint path")->required();
  x->add_option("--data", exp_data, "Dataset path")->required();
  x->add_option("--bag-id", exp_ids, "Bag id (repeatable)")->required();
  x->add_option("--out", exp_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return DSAGL_E_USAGE;
  }

  try {
    if (*g) {
      Dataset ds;
      check(dsagl_dataset_generate(&gen, &ds.h));
      check(dsagl_dataset_save(ds.h, gen_out.c_str()));
      char* s = nullptr;
      check(dsagl_dataset_summary(ds.h, &s));
      const std::string summary = take(s);
      write_file(gen_out + ".summary.txt", summary);
      std::fputs(summary.c_str(), stdout);
    } else if (*t) {
      const std::string text = train_config.empty() ? "" : read_file(train_config);
      char* r = nullptr;
      check(dsagl_config_resolve(text.c_str(), &r));
      const std::string resolved = take(r);
      if (train_data.empty()) train_data = config_value(resolved, "data_path");
      if (train_eval.empty()) train_eval = config_value(resolved, "eval_data_path");
      if (train_out.empty()) train_out = config_value(resolved, "out_dir");
      if (train_data.empty()) {
        std::fprintf(stderr, "error: no training data (--data or data_path)\n");
        return DSAGL_E_USAGE;
      }
      if (train_out.empty()) {
        std::fprintf(stderr, "error: no run directory (--out or out_dir)\n");
        return DSAGL_E_USAGE;
      }
      // Flags become part of the echoed config.
      std::string full = resolved;
      auto set = [&](const std::string& key, const std::string& value) {
        std::istringstream in(full);
        std::string line, out;
        while (std::getline(in, line)) {
          const auto eq = line.find('=');
          std::string k = eq == std::string::npos ? "" : line.substr(0, eq);
          while (!k.empty() && k.back() == ' ') k.pop_back();
          out += (k == key ? key + " = " + value : line) + "\n";
        }
        full = out;
      };
      set("data_path", train_data);
      set("eval_data_path", train_eval);
      set("out_dir", train_out);

      Dataset tr, ev;
      check(dsagl_dataset_load(train_data.c_str(), &tr.h));
      if (!train_eval.empty()) check(dsagl_dataset_load(train_eval.c_str(), &ev.h));
      Model m;
      check(dsagl_train(full.c_str(), tr.h, ev.h, train_out.c_str(), &m.h, nullptr));
      dsagl_metrics met;
      check(dsagl_evaluate(m.h, ev.h ? ev.h : tr.h, &met));
      char* table = nullptr;
      check(dsagl_metrics_format(&met, 0, &table));
      std::fputs(take(table).c_str(), stdout);
    } else if (*e) {
      Model m;
      check(dsagl_model_load(eval_ckpt.c_str(), &m.h));
      Dataset ds;
      check(dsagl_dataset_load(eval_data.c_str(), &ds.h));
      dsagl_metrics met;
      check(dsagl_evaluate(m.h, ds.h, &met));
      char* out = nullptr;
      check(dsagl_metrics_format(&met, eval_csv ? 1 : 0, &out));
      std::fputs(take(out).c_str(), stdout);
    } else if (*a) {
      if (abl_seeds == 0) {
        std::fprintf(stderr, "error: --seeds must be >= 1\n");
        return DSAGL_E_USAGE;
      }
      std::vector<std::uint64_t> seeds;
      for (std::size_t i = 0; i < abl_seeds; ++i) seeds.push_back(abl_first + i);
      const std::string overrides = abl_config.empty() ? "" : read_file(abl_config);
      char *table = nullptr, *csv = nullptr;
      check(dsagl_ablate(abl_suite.c_str(), &abl, overrides.c_str(), seeds.data(), seeds.size(), &table, &csv));
      const std::string tab = take(table), cells = take(csv);
      std::fputs(tab.c_str(), stdout);
      if (!abl_out.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(abl_out, ec);
        write_file(abl_out + "/table.txt", tab);
        write_file(abl_out + "/cells.csv", cells);
      }
    } else if (*x) {
      Model m;
      check(dsagl_model_load(exp_ckpt.c_str(), &m.h));
      Dataset ds;
      check(dsagl_dataset_load(exp_data.c_str(), &ds.h));
      check(dsagl_export_attention(m.h, ds.h, exp_ids.data(), exp_ids.size(), exp_out.c_str()));
      std::printf("wrote %s/attention.txt and %zu heatmap(s)\n", exp_out.c_str(), exp_ids.size());
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return 0;
}
