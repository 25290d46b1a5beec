// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsagl/config.hpp"
#include "dsagl/data.hpp"
#include "dsagl/dualstream.hpp"
#include "dsagl/metrics.hpp"

namespace dsagl {

/// Steps any subset of parameters; state is kept per parameter.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  /// Applies one update to each parameter from its accumulated gradient.
  virtual void step(std::span<const Var> params) = 0;
};

class Sgd final : public Optimizer {
 public:
  Sgd(double lr, double weight_decay);
  void step(std::span<const Var> params) override;

 private:
  double lr_, wd_;
};

class Adam final : public Optimizer {
 public:
  Adam(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<const Var> params) override;

 private:
  struct State {
    Tensor m, v;
    std::size_t t = 0;
  };
  double lr_, wd_, b1_, b2_, eps_;
  std::unordered_map<const Node*, State> state_;
};

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr, double weight_decay);
std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, double lr, double weight_decay);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double teacher_loss = 0.0;
  double student_loss = 0.0;
  double instance_auc = 0.0;
  double bag_auc = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> records;
  std::size_t steps = 0;
  std::size_t teacher_phases = 0;

  static const char* header() { return "epoch,teacher_loss,student_loss,instance_auc,bag_auc,seconds"; }
  std::string to_csv() const;
};

/// Pseudo labels for one bag from the teacher in eval mode, before any
/// mode transform: norm_prob of the attention weights.
std::vector<double> generate_pseudo_labels(const DsaglModel& model, const Bag& bag, double eps = 1e-8);

/// Applies the configured pseudo-label mode to soft labels.
std::vector<double> apply_pseudo_label_mode(PseudoLabelMode mode, std::span<const double> soft, const Bag& bag,
                                            Rng& rng);

struct TrainCallbacks {
  /// Called after every epoch's evaluation.
  std::function<void(const EpochRecord&, const DsaglModel&)> on_epoch;
  /// Called after each optimisation step (1-based step, whether it had a teacher phase).
  std::function<void(std::size_t step, bool teacher_phase, const DsaglModel&)> on_step;
};

/// Stateful trainer so tests can drive individual steps.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const BagDataset& train, const BagDataset* eval = nullptr);

  DsaglModel& model() noexcept { return *model_; }
  const TrainLog& log() const noexcept { return log_; }
  std::unique_ptr<DsaglModel> release_model() { return std::move(model_); }

  /// One optimisation step over the given bag indices.
  void step(std::span<const std::size_t> batch);
  /// One pass over the shuffled dataset, then evaluation. Without
  /// evaluation the AUC fields are NaN.
  EpochRecord epoch(bool evaluate_after = true);
  void run(const TrainCallbacks& cb = {});

 private:
  double teacher_phase(std::span<const std::size_t> batch);
  double student_phase(std::span<const std::size_t> batch);
  double single_stream_phase(std::span<const std::size_t> batch);
  void write_checkpoint(const std::string& name) const;

  TrainConfig cfg_;
  const BagDataset& train_;
  const BagDataset* eval_;
  std::unique_ptr<DsaglModel> model_;
  std::unique_ptr<Optimizer> opt_;
  Rng order_rng_, dropout_rng_, label_rng_;
  TrainLog log_;
  TrainCallbacks cb_;
  double epoch_teacher_sum_ = 0.0, epoch_student_sum_ = 0.0;
  std::size_t epoch_teacher_n_ = 0, epoch_student_n_ = 0;
};

struct TrainResult {
  std::unique_ptr<DsaglModel> model;
  TrainLog log;
};

/// Full run. When cfg.out_dir is set, checkpoints and the log are written there.
TrainResult train(const TrainConfig& cfg, const BagDataset& train, const BagDataset* eval = nullptr,
                  const TrainCallbacks& cb = {});

// Checkpoint: "DSCK", u8 version, u64 config length + config text, u64
// parameter count, then per parameter u64 name length, name, tensor dump.
inline constexpr std::uint8_t kCheckpointVersion = 1;

void save_checkpoint(const DsaglModel& model, const TrainConfig& cfg, const std::string& path);

struct LoadedModel {
  TrainConfig config;
  std::unique_ptr<DsaglModel> model;
};
/// Rebuilds the model from the stored config and checks every stored
/// tensor against the expected shape.
LoadedModel load_checkpoint(const std::string& path);
LoadedModel read_checkpoint(std::istream& in);

/// Concatenates the instances of several bags along the leading axis.
Tensor stack_instances(const BagDataset& ds, std::span<const std::size_t> batch);

}  // namespace dsagl
