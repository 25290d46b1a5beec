// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsagl/autograd.hpp"
#include "dsagl/encoder.hpp"
#include "dsagl/fasa.hpp"
#include "dsagl/nn.hpp"
#include "dsagl/rng.hpp"

namespace dsagl {

enum class PseudoLabelMode { soft, hard, random, ground_truth };

const char* to_string(PseudoLabelMode m);
PseudoLabelMode parse_pseudo_label_mode(const std::string& s);

struct LossConfig {
  double alpha = 0.7;
  double temperature = 2.0;
  double w_n = 0.5;
  double epsilon = 1e-8;
  PseudoLabelMode mode = PseudoLabelMode::soft;

  void validate() const;
};

// Plain evaluations of the loss terms.

/// -[y log(y_hat+eps) + (1-y) log(1-y_hat+eps)].
double teacher_loss(int y, double y_hat, double eps = 1e-8);

/// Per-bag min-max normalisation; 0.5 everywhere when the range is below eps.
std::vector<double> norm_prob(std::span<const double> weights, double eps = 1e-8);

/// Hard labels threshold at 0.5 with ties going positive.
std::vector<double> binarize(std::span<const double> z_hat);

/// probs[N,2] rows are (p0, p1).
double weighted_ce(std::span<const double> z_hat, const Tensor& probs, double w_n, double eps = 1e-8);

/// Teacher logit pairs (log(1-z+eps), log(z+eps)) per instance -> [N,2].
Tensor teacher_logit_pairs(std::span<const double> z_hat, double eps = 1e-8);

/// T^2 * mean_j KL(softmax(t_j/T) || softmax(s_j/T)) over [N,2] logits.
double kl_distill(const Tensor& teacher_logits, const Tensor& student_logits, double temperature);

/// sum_c q log(q / max(p, eps)) averaged over rows, with 0 log 0 = 0. Takes
/// distributions directly.
double kl_from_distributions(const Tensor& q, const Tensor& p, double eps = 1e-8);

inline double hybrid_loss(double ce, double kl, double alpha) { return alpha * ce + (1.0 - alpha) * kl; }

// Differentiable versions used in training.
namespace loss {

/// Mean teacher loss over bags; y_hat[M].
Var teacher(Graph& g, const Var& y_hat, std::span<const int> labels, double eps);
/// probs[N,2] from the student.
Var weighted_ce(Graph& g, const Var& probs, std::span<const double> z_hat, double w_n, double eps);
/// Teacher side is a constant distribution; student_logits[N,2].
Var kl_distill(Graph& g, const Tensor& teacher_logits, const Var& student_logits, double temperature);
Var hybrid(Graph& g, const Var& ce, const Var& kl, double alpha);

}  // namespace loss

struct ModelConfig {
  EncoderConfig encoder;
  FasaConfig fasa;
  bool use_fasa = true;     // false: mean pooling with a linear scorer
  bool dual_stream = true;  // false: single instance stream with max pooling

  void validate() const;
};

/// Shared encoder with teacher (attention pooling + P_t) and student (P_s)
/// heads. Parameter names are prefixed encoder., fasa./pool., teacher.,
/// student.; the teacher-exclusive group is everything under fasa., pool.
/// and teacher.
class DsaglModel {
 public:
  DsaglModel(const ModelConfig& cfg, std::uint64_t seed);
  DsaglModel(const DsaglModel&) = delete;
  DsaglModel& operator=(const DsaglModel&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }

  struct TeacherOut {
    Var weights;  // [N]
    Var logit;    // [1]
    Var y_hat;    // [1]
  };
  /// x[N,d] features of one bag.
  TeacherOut teacher_forward(Graph& g, const Var& x) const;
  /// x[N,d] -> logits[N,2].
  Var student_logits(Graph& g, const Var& x) const;
  Var student_probs(Graph& g, const Var& x) const;

  nn::ParamStore& params() noexcept { return params_; }
  const nn::ParamStore& params() const noexcept { return params_; }
  std::vector<Var> encoder_params() const;
  std::vector<Var> teacher_params() const;
  std::vector<Var> student_params() const;

  const Encoder& encoder() const noexcept { return encoder_; }
  const Fasa* fasa() const noexcept { return fasa_ ? &*fasa_ : nullptr; }

  // Teacher classifier P_t and the student head.
  Var pt_w, pt_b;      // [1,1], [1]
  Var ps_w, ps_b;      // [2,d], [2]
  Var pool_w, pool_b;  // mean-pooling scorer [1,d], [1] when use_fasa is off

 private:
  ModelConfig cfg_;
  nn::ParamStore params_;
  Rng init_rng_;
  Encoder encoder_;
  std::optional<Fasa> fasa_;
};

}  // namespace dsagl
