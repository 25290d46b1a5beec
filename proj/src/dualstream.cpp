// SPDX-License-Identifier: Apache-2.0
#include "dsagl/dualstream.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dsagl/error.hpp"
#include "dsagl/ops.hpp"

namespace dsagl {

const char* to_string(PseudoLabelMode m) {
  switch (m) {
    case PseudoLabelMode::soft: return "soft";
    case PseudoLabelMode::hard: return "hard";
    case PseudoLabelMode::random: return "random";
    case PseudoLabelMode::ground_truth: return "ground_truth";
  }
  return "soft";
}

PseudoLabelMode parse_pseudo_label_mode(const std::string& s) {
  if (s == "soft") return PseudoLabelMode::soft;
  if (s == "hard") return PseudoLabelMode::hard;
  if (s == "random") return PseudoLabelMode::random;
  if (s == "ground_truth") return PseudoLabelMode::ground_truth;
  throw ConfigError("unknown pseudo_label_mode '" + s + "' (expected soft, hard, random or ground_truth)");
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0,1]");
  if (!(temperature >= 1.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be >= 1");
  if (!(w_n >= 0.0 && w_n <= 1.0)) throw ConfigError("w_n must be in [0,1]");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
}

double teacher_loss(int y, double y_hat, double eps) {
  return -(y * std::log(y_hat + eps) + (1 - y) * std::log(1.0 - y_hat + eps));
}

std::vector<double> norm_prob(std::span<const double> a, double eps) {
  if (a.empty()) throw ShapeError("norm_prob: empty bag");
  const auto [lo, hi] = std::minmax_element(a.begin(), a.end());
  const double range = *hi - *lo;
  std::vector<double> z(a.size(), 0.5);
  if (range < eps) return z;
  for (std::size_t j = 0; j < a.size(); ++j) z[j] = (a[j] - *lo) / (range + eps);
  return z;
}

std::vector<double> binarize(std::span<const double> z_hat) {
  std::vector<double> out(z_hat.size());
  for (std::size_t j = 0; j < z_hat.size(); ++j) out[j] = z_hat[j] >= 0.5 ? 1.0 : 0.0;
  return out;
}

namespace {

void check_pairs(const Tensor& t, std::size_t n, const char* what) {
  if (t.rank() != 2 || t.dim(1) != 2 || t.dim(0) != n)
    throw ShapeError(std::string(what) + ": expected [" + std::to_string(n) + ",2], got " + shape_str(t.shape()));
}

void log_softmax_row(const double* x, double inv_t, double* out) {
  const double a = x[0] * inv_t, b = x[1] * inv_t;
  const double m = std::max(a, b);
  const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
  out[0] = a - lse;
  out[1] = b - lse;
}

}  // namespace

double weighted_ce(std::span<const double> z, const Tensor& probs, double w_n, double eps) {
  check_pairs(probs, z.size(), "weighted_ce");
  double s = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j)
    s += w_n * (1.0 - z[j]) * std::log(probs[2 * j] + eps) + (1.0 - w_n) * z[j] * std::log(probs[2 * j + 1] + eps);
  return -s / static_cast<double>(z.size());
}

Tensor teacher_logit_pairs(std::span<const double> z, double eps) {
  if (z.empty()) throw ShapeError("teacher_logit_pairs: empty input");
  Tensor t({z.size(), 2});
  for (std::size_t j = 0; j < z.size(); ++j) {
    t[2 * j] = std::log(1.0 - z[j] + eps);
    t[2 * j + 1] = std::log(z[j] + eps);
  }
  return t;
}

double kl_distill(const Tensor& teacher_logits, const Tensor& student_logits, double T) {
  if (teacher_logits.rank() != 2) throw ShapeError("kl_distill: logits must be [N,2]");
  const std::size_t n = teacher_logits.dim(0);
  check_pairs(teacher_logits, n, "kl_distill");
  check_pairs(student_logits, n, "kl_distill");
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double lq[2], lp[2];
    log_softmax_row(teacher_logits.ptr() + 2 * j, 1.0 / T, lq);
    log_softmax_row(student_logits.ptr() + 2 * j, 1.0 / T, lp);
    for (int c = 0; c < 2; ++c) {
      const double q = std::exp(lq[c]);
      if (q > 0.0) s += q * (lq[c] - lp[c]);
    }
  }
  return T * T * s / static_cast<double>(n);
}

double kl_from_distributions(const Tensor& q, const Tensor& p, double eps) {
  if (q.shape() != p.shape() || q.rank() != 2) throw ShapeError("kl_from_distributions: shapes disagree");
  const std::size_t n = q.dim(0), k = q.dim(1);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < k; ++c) {
      const double qv = q[j * k + c];
      if (qv > 0.0) s += qv * std::log(qv / std::max(p[j * k + c], eps));
    }
  return s / static_cast<double>(n);
}

namespace loss {

Var teacher(Graph& g, const Var& y_hat, std::span<const int> labels, double eps) {
  const std::size_t m = y_hat.value().size();
  if (labels.size() != m) throw ShapeError("teacher loss: label count disagrees with predictions");
  Tensor y({m}), ny({m});
  for (std::size_t i = 0; i < m; ++i) {
    y[i] = labels[i];
    ny[i] = 1 - labels[i];
  }
  Var flat = ops::reshape(g, y_hat, {m});
  Var pos = ops::mul(g, ops::log_eps(g, flat, eps), constant(y));
  Var neg = ops::mul(g, ops::log_eps(g, ops::add_scalar(g, ops::scale(g, flat, -1.0), 1.0), eps), constant(ny));
  return ops::scale(g, ops::mean(g, ops::add(g, pos, neg)), -1.0);
}

Var weighted_ce(Graph& g, const Var& probs, std::span<const double> z, double w_n, double eps) {
  const std::size_t n = z.size();
  if (probs.value().rank() != 2 || probs.dim(0) != n || probs.dim(1) != 2)
    throw ShapeError("weighted_ce: probs must be [" + std::to_string(n) + ",2], got " + shape_str(probs.shape()));
  Tensor c0({n}), c1({n});
  for (std::size_t j = 0; j < n; ++j) {
    c0[j] = w_n * (1.0 - z[j]);
    c1[j] = (1.0 - w_n) * z[j];
  }
  Var t0 = ops::mul(g, ops::log_eps(g, ops::column(g, probs, 0), eps), constant(c0));
  Var t1 = ops::mul(g, ops::log_eps(g, ops::column(g, probs, 1), eps), constant(c1));
  return ops::scale(g, ops::mean(g, ops::add(g, t0, t1)), -1.0);
}

Var kl_distill(Graph& g, const Tensor& teacher_logits, const Var& student_logits, double T) {
  const std::size_t n = student_logits.dim(0);
  check_pairs(teacher_logits, n, "kl_distill");
  check_pairs(student_logits.value(), n, "kl_distill");
  Tensor q({n, 2});
  double entropy_term = 0.0;  // sum q log q
  for (std::size_t j = 0; j < n; ++j) {
    double lq[2];
    log_softmax_row(teacher_logits.ptr() + 2 * j, 1.0 / T, lq);
    for (int c = 0; c < 2; ++c) {
      q[2 * j + c] = std::exp(lq[c]);
      if (q[2 * j + c] > 0.0) entropy_term += q[2 * j + c] * lq[c];
    }
  }
  Var logp = ops::log_softmax(g, ops::scale(g, student_logits, 1.0 / T), 1);
  Var cross = ops::sum(g, ops::mul(g, logp, constant(q)));
  const double k = T * T / static_cast<double>(n);
  return ops::add_scalar(g, ops::scale(g, cross, -k), k * entropy_term);
}

Var hybrid(Graph& g, const Var& ce, const Var& kl, double alpha) {
  return ops::add(g, ops::scale(g, ce, alpha), ops::scale(g, kl, 1.0 - alpha));
}

}  // namespace loss

void ModelConfig::validate() const {
  encoder.validate();
  if (use_fasa) fasa.validate();
}

DsaglModel::DsaglModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), init_rng_(seed), encoder_(cfg.encoder, params_, init_rng_) {
  cfg_.validate();
  const std::size_t d = cfg_.encoder.feature_dim;
  if (cfg_.use_fasa) {
    fasa_.emplace(cfg_.fasa, d, params_, init_rng_);
  } else {
    pool_w = params_.weight("pool.w", {1, d}, d, init_rng_);
    pool_b = params_.zeros("pool.b", {1});
  }
  // P_t starts as identity-plus-sigmoid of the bag logit.
  pt_w = params_.add("teacher.w", Tensor({1, 1}, 1.0));
  pt_b = params_.zeros("teacher.b", {1});
  ps_w = params_.weight("student.w", {2, d}, d, init_rng_);
  ps_b = params_.zeros("student.b", {2});
}

DsaglModel::TeacherOut DsaglModel::teacher_forward(Graph& g, const Var& x) const {
  if (x.value().rank() != 2) throw ShapeError("teacher_forward: features must be [N,d]");
  Var weights, logit;
  if (fasa_) {
    auto p = fasa_->forward(g, x);
    weights = p.weights;
    logit = p.logit;
  } else {
    const std::size_t n = x.dim(0);
    Var scores = ops::reshape(g, ops::linear(g, x, pool_w, pool_b), {n});
    weights = ops::softmax(g, scores, 0);
    Var pooled = ops::reshape(g, ops::mean(g, scores), {1});
    logit = pooled;  // linear scorer of the mean feature equals the mean score
  }
  Var y_hat = ops::reshape(g, ops::sigmoid(g, ops::linear(g, ops::reshape(g, logit, {1, 1}), pt_w, pt_b)), {1});
  return {weights, logit, y_hat};
}

Var DsaglModel::student_logits(Graph& g, const Var& x) const { return ops::linear(g, x, ps_w, ps_b); }

Var DsaglModel::student_probs(Graph& g, const Var& x) const {
  return ops::softmax(g, student_logits(g, x), 1);
}

std::vector<Var> DsaglModel::encoder_params() const { return params_.group("encoder."); }

std::vector<Var> DsaglModel::teacher_params() const {
  std::vector<Var> out = params_.group("fasa.");
  for (auto& v : params_.group("pool.")) out.push_back(v);
  for (auto& v : params_.group("teacher.")) out.push_back(v);
  return out;
}

std::vector<Var> DsaglModel::student_params() const { return params_.group("student."); }

}  // namespace dsagl
