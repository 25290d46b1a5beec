// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "dsagl/dualstream.hpp"

namespace dsagl {

enum class OptimizerKind { sgd, adam };

const char* to_string(OptimizerKind k);
OptimizerKind parse_optimizer_kind(const std::string& s);

struct TrainConfig {
  std::uint64_t seed = 7;
  std::size_t epochs = 30;
  std::size_t teacher_update_interval = 4;  // K, in optimisation steps
  std::size_t batch_size = 4;               // bags per step
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 2e-3;
  double weight_decay = 1e-5;
  std::size_t checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint
  bool record_time = false;          // false writes 0 seconds so logs are reproducible
  bool student_updates_encoder = true;
  bool teacher_updates_encoder = true;

  LossConfig loss;
  ModelConfig model;

  // Paths; command-line flags take precedence.
  std::string data_path;
  std::string eval_data_path;
  std::string out_dir;

  void validate() const;
};

/// Parses "key = value" lines; '#' starts a comment. Unknown or repeated
/// keys and malformed values raise ConfigError naming the key and line.
/// Keys not present keep their defaults.
TrainConfig parse_config(const std::string& text);
/// Same rules, but keys not present keep the values of `base`.
TrainConfig parse_config_over(const TrainConfig& base, const std::string& text);
TrainConfig load_config(const std::string& path);

/// Every key with its resolved value, in a fixed order; parse_config of
/// the result reproduces the config.
std::string config_to_text(const TrainConfig& cfg);

}  // namespace dsagl
