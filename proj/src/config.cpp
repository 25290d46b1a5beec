// SPDX-License-Identifier: Apache-2.0
#include "dsagl/config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

#include "dsagl/error.hpp"

namespace dsagl {

const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (teacher_update_interval == 0) throw ConfigError("teacher_update_interval must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  loss.validate();
  model.validate();
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE)
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  return d;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  if (v.empty() || v[0] == '-') throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  const unsigned long long u = std::strtoull(v.c_str(), &end, 10);
  if (*end != '\0' || errno == ERANGE)
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  return u;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

struct Key {
  const char* name;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

#define DSAGL_UINT(NAME, FIELD)                                                              \
  Key{NAME, [](const TrainConfig& c) { return std::to_string(c.FIELD); },                    \
      [](TrainConfig& c, const std::string& v) { c.FIELD = parse_uint(NAME, v); }}
#define DSAGL_DOUBLE(NAME, FIELD)                                                            \
  Key{NAME, [](const TrainConfig& c) { return fmt_double(c.FIELD); },                        \
      [](TrainConfig& c, const std::string& v) { c.FIELD = parse_double(NAME, v); }}
#define DSAGL_BOOL(NAME, FIELD)                                                              \
  Key{NAME, [](const TrainConfig& c) { return std::string(c.FIELD ? "true" : "false"); },    \
      [](TrainConfig& c, const std::string& v) { c.FIELD = parse_bool(NAME, v); }}
#define DSAGL_STRING(NAME, FIELD)                                                            \
  Key{NAME, [](const TrainConfig& c) { return c.FIELD; },                                    \
      [](TrainConfig& c, const std::string& v) { c.FIELD = v; }}

const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      DSAGL_UINT("seed", seed),
      DSAGL_UINT("epochs", epochs),
      DSAGL_UINT("teacher_update_interval", teacher_update_interval),
      DSAGL_UINT("batch_size", batch_size),
      Key{"optimizer", [](const TrainConfig& c) { return std::string(to_string(c.optimizer)); },
          [](TrainConfig& c, const std::string& v) { c.optimizer = parse_optimizer_kind(v); }},
      DSAGL_DOUBLE("learning_rate", learning_rate),
      DSAGL_DOUBLE("weight_decay", weight_decay),
      DSAGL_UINT("checkpoint_every", checkpoint_every),
      DSAGL_BOOL("record_time", record_time),
      DSAGL_BOOL("student_updates_encoder", student_updates_encoder),
      DSAGL_BOOL("teacher_updates_encoder", teacher_updates_encoder),
      DSAGL_DOUBLE("alpha", loss.alpha),
      DSAGL_DOUBLE("temperature", loss.temperature),
      DSAGL_DOUBLE("w_n", loss.w_n),
      DSAGL_DOUBLE("epsilon", loss.epsilon),
      Key{"pseudo_label_mode", [](const TrainConfig& c) { return std::string(to_string(c.loss.mode)); },
          [](TrainConfig& c, const std::string& v) { c.loss.mode = parse_pseudo_label_mode(v); }},
      DSAGL_UINT("in_channels", model.encoder.in_channels),
      DSAGL_UINT("stem_channels", model.encoder.stem_channels),
      DSAGL_UINT("stem_layers", model.encoder.stem_layers),
      DSAGL_UINT("mamba_depth", model.encoder.mamba_depth),
      DSAGL_UINT("state_dim", model.encoder.state_dim),
      DSAGL_UINT("feature_dim", model.encoder.feature_dim),
      DSAGL_DOUBLE("dropout", model.encoder.dropout),
      DSAGL_UINT("eca_kernel", model.encoder.eca_kernel),
      DSAGL_UINT("se_reduction", model.encoder.se_reduction),
      DSAGL_UINT("spatial_kernel", model.encoder.spatial_kernel),
      DSAGL_BOOL("use_fasa", model.use_fasa),
      DSAGL_BOOL("dual_stream", model.dual_stream),
      DSAGL_UINT("fasa_channels", model.fasa.channels),
      DSAGL_UINT("fasa_reduction", model.fasa.reduction),
      DSAGL_UINT("fasa_spatial_kernel", model.fasa.spatial_kernel),
      DSAGL_UINT("fasa_attention_hidden", model.fasa.attention_hidden),
      DSAGL_STRING("data_path", data_path),
      DSAGL_STRING("eval_data_path", eval_data_path),
      DSAGL_STRING("out_dir", out_dir),
  };
  return k;
}

#undef DSAGL_UINT
#undef DSAGL_DOUBLE
#undef DSAGL_BOOL
#undef DSAGL_STRING

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig parse_config(const std::string& text) { return parse_config_over(TrainConfig{}, text); }

TrainConfig parse_config_over(const TrainConfig& base, const std::string& text) {
  TrainConfig cfg = base;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Key* k = nullptr;
    for (const auto& cand : keys())
      if (key == cand.name) k = &cand;
    if (!k) throw ConfigError("unknown config key '" + key + "' (line " + std::to_string(lineno) + ")");
    if (!seen.insert(key).second)
      throw ConfigError("config key '" + key + "' repeated (line " + std::to_string(lineno) + ")");
    k->set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return parse_config(s.str());
}

std::string config_to_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) {
    out += k.name;
    out += " = ";
    out += k.get(cfg);
    out += '\n';
  }
  return out;
}

}  // namespace dsagl
