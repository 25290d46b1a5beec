// SPDX-License-Identifier: Apache-2.0
#include "dsagl/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "dsagl/error.hpp"
#include "dsagl/ops.hpp"

namespace dsagl {

Sgd::Sgd(double lr, double wd) : lr_(lr), wd_(wd) {
  if (!(lr > 0.0)) throw ConfigError("sgd: learning rate must be positive");
}

void Sgd::step(std::span<const Var> params) {
  for (const Var& p : params) {
    Node* n = p.node();
    const Tensor& g = n->grad_buffer();
    Tensor& v = n->value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * (g[i] + wd_ * v[i]);
  }
}

Adam::Adam(double lr, double wd, double b1, double b2, double eps)
    : lr_(lr), wd_(wd), b1_(b1), b2_(b2), eps_(eps) {
  if (!(lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
}

void Adam::step(std::span<const Var> params) {
  for (const Var& p : params) {
    Node* n = p.node();
    const Tensor& g = n->grad_buffer();
    Tensor& v = n->value;
    State& s = state_[n];
    if (s.m.empty()) {
      s.m = Tensor(v.shape(), 0.0);
      s.v = Tensor(v.shape(), 0.0);
    }
    ++s.t;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(s.t));
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double gi = g[i] + wd_ * v[i];
      s.m[i] = b1_ * s.m[i] + (1.0 - b1_) * gi;
      s.v[i] = b2_ * s.v[i] + (1.0 - b2_) * gi * gi;
      v[i] -= lr_ * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_);
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr, double wd) {
  if (kind == OptimizerKind::sgd) return std::make_unique<Sgd>(lr, wd);
  return std::make_unique<Adam>(lr, wd);
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, double lr, double wd) {
  return make_optimizer(parse_optimizer_kind(kind), lr, wd);
}

std::string TrainLog::to_csv() const {
  std::string out = header();
  out += '\n';
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.teacher_loss, r.student_loss,
                  r.instance_auc, r.bag_auc, r.seconds);
    out += buf;
  }
  return out;
}

Tensor stack_instances(const BagDataset& ds, std::span<const std::size_t> batch) {
  if (batch.empty()) throw ShapeError("stack_instances: empty batch");
  const Shape& s0 = ds.bags.at(batch[0]).instances.shape();
  std::size_t total = 0;
  for (auto i : batch) total += ds.bags.at(i).size();
  Tensor out({total, s0[1], s0[2], s0[3]});
  std::size_t at = 0;
  for (auto i : batch) {
    const Tensor& t = ds.bags[i].instances;
    std::copy(t.data().begin(), t.data().end(), out.ptr() + at);
    at += t.size();
  }
  return out;
}

std::vector<double> generate_pseudo_labels(const DsaglModel& model, const Bag& bag, double eps) {
  Graph g(false);
  auto t = model.teacher_forward(g, constant(encode_bag(model, bag)));
  return norm_prob(t.weights.value().data(), eps);
}

std::vector<double> apply_pseudo_label_mode(PseudoLabelMode mode, std::span<const double> soft, const Bag& bag,
                                            Rng& rng) {
  switch (mode) {
    case PseudoLabelMode::soft: return {soft.begin(), soft.end()};
    case PseudoLabelMode::hard: return binarize(soft);
    case PseudoLabelMode::random: {
      std::vector<double> z(soft.size());
      for (auto& v : z) v = static_cast<double>(rng.below(2));
      return z;
    }
    case PseudoLabelMode::ground_truth: {
      std::vector<double> z(bag.size());
      for (std::size_t j = 0; j < bag.size(); ++j) z[j] = bag.instance_labels[j];
      return z;
    }
  }
  return {soft.begin(), soft.end()};
}

namespace {

void zero_all(const DsaglModel& m) {
  for (const auto& [name, v] : m.params().entries()) const_cast<Var&>(v).zero_grad();
}

void append(std::vector<Var>& dst, const std::vector<Var>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

void check_loss(double v, const char* which, std::size_t step) {
  if (!std::isfinite(v))
    throw NumericError(std::string("non-finite ") + which + " loss at step " + std::to_string(step));
}

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, const BagDataset& train, const BagDataset* eval)
    : cfg_(cfg),
      train_(train),
      eval_(eval),
      order_rng_(mix_seed(cfg.seed, 1)),
      dropout_rng_(mix_seed(cfg.seed, 2)),
      label_rng_(mix_seed(cfg.seed, 3)) {
  cfg_.validate();
  train_.validate();
  if (eval_) eval_->validate();
  const Shape& s = train_.bags.front().instances.shape();
  if (s[1] != cfg_.model.encoder.in_channels)
    throw ConfigError("dataset has " + std::to_string(s[1]) + " channels but in_channels = " +
                      std::to_string(cfg_.model.encoder.in_channels));
  model_ = std::make_unique<DsaglModel>(cfg_.model, mix_seed(cfg_.seed, 0));
  opt_ = make_optimizer(cfg_.optimizer, cfg_.learning_rate, cfg_.weight_decay);
}

double Trainer::teacher_phase(std::span<const std::size_t> batch) {
  Graph g;
  EncodeOptions opt;
  opt.train = true;
  opt.rng = &dropout_rng_;
  Var feats = model_->encoder().encode(g, constant(stack_instances(train_, batch)), opt);
  std::vector<Var> y_hats;
  std::vector<int> labels;
  std::size_t row = 0;
  for (auto i : batch) {
    const Bag& b = train_.bags[i];
    y_hats.push_back(model_->teacher_forward(g, ops::slice_rows(g, feats, row, row + b.size())).y_hat);
    labels.push_back(b.label);
    row += b.size();
  }
  Var l = loss::teacher(g, ops::concat_rows(g, y_hats), labels, cfg_.loss.epsilon);
  const double v = l.value().item();
  check_loss(v, "teacher", log_.steps + 1);
  g.backward(l);
  std::vector<Var> params = model_->teacher_params();
  if (cfg_.teacher_updates_encoder) append(params, model_->encoder_params());
  opt_->step(params);
  zero_all(*model_);
  ++log_.teacher_phases;
  return v;
}

double Trainer::student_phase(std::span<const std::size_t> batch) {
  // CE always sees hard labels; KL sees the mode's labels, soft in soft mode.
  std::vector<double> z, hard;
  for (auto i : batch) {
    const Bag& b = train_.bags[i];
    std::vector<double> s = generate_pseudo_labels(*model_, b, cfg_.loss.epsilon);
    std::vector<double> m = apply_pseudo_label_mode(cfg_.loss.mode, s, b, label_rng_);
    std::vector<double> h = binarize(m);
    z.insert(z.end(), m.begin(), m.end());
    hard.insert(hard.end(), h.begin(), h.end());
  }
  Graph g;
  EncodeOptions opt;
  opt.train = true;
  opt.rng = &dropout_rng_;
  Var feats = model_->encoder().encode(g, constant(stack_instances(train_, batch)), opt);
  Var logits = model_->student_logits(g, feats);
  Var probs = ops::softmax(g, logits, 1);
  const LossConfig& lc = cfg_.loss;
  Var ce = loss::weighted_ce(g, probs, hard, lc.w_n, lc.epsilon);
  Var l = ce;
  if (lc.alpha < 1.0) {
    Var kl = loss::kl_distill(g, teacher_logit_pairs(z, lc.epsilon), logits, lc.temperature);
    l = loss::hybrid(g, ce, kl, lc.alpha);
  }
  const double v = l.value().item();
  check_loss(v, "student", log_.steps + 1);
  g.backward(l);
  std::vector<Var> params = model_->student_params();
  if (cfg_.student_updates_encoder) append(params, model_->encoder_params());
  opt_->step(params);
  zero_all(*model_);
  return v;
}

double Trainer::single_stream_phase(std::span<const std::size_t> batch) {
  Graph g;
  EncodeOptions opt;
  opt.train = true;
  opt.rng = &dropout_rng_;
  Var feats = model_->encoder().encode(g, constant(stack_instances(train_, batch)), opt);
  Var p1 = ops::column(g, model_->student_probs(g, feats), 1);
  std::vector<Var> scores;
  std::vector<int> labels;
  std::size_t row = 0;
  for (auto i : batch) {
    const Bag& b = train_.bags[i];
    scores.push_back(ops::reshape(g, ops::max_all(g, ops::slice_rows(g, p1, row, row + b.size())), {1}));
    labels.push_back(b.label);
    row += b.size();
  }
  Var l = loss::teacher(g, ops::concat_rows(g, scores), labels, cfg_.loss.epsilon);
  const double v = l.value().item();
  check_loss(v, "student", log_.steps + 1);
  g.backward(l);
  std::vector<Var> params = model_->student_params();
  append(params, model_->encoder_params());
  opt_->step(params);
  zero_all(*model_);
  return v;
}

void Trainer::step(std::span<const std::size_t> batch) {
  const std::size_t t = log_.steps;
  bool teacher = false;
  if (cfg_.model.dual_stream) {
    if (t % cfg_.teacher_update_interval == 0) {
      epoch_teacher_sum_ += teacher_phase(batch);
      ++epoch_teacher_n_;
      teacher = true;
    }
    epoch_student_sum_ += student_phase(batch);
  } else {
    epoch_student_sum_ += single_stream_phase(batch);
  }
  ++epoch_student_n_;
  ++log_.steps;
  if (cb_.on_step) cb_.on_step(log_.steps, teacher, *model_);
}

EpochRecord Trainer::epoch(bool evaluate_after) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(train_.bags.size());
  std::iota(order.begin(), order.end(), 0);
  order_rng_.shuffle(order);
  epoch_teacher_sum_ = epoch_student_sum_ = 0.0;
  epoch_teacher_n_ = epoch_student_n_ = 0;
  for (std::size_t b = 0; b < order.size(); b += cfg_.batch_size) {
    const std::size_t e = std::min(order.size(), b + cfg_.batch_size);
    step(std::span<const std::size_t>(order.data() + b, e - b));
  }
  EpochRecord r;
  r.epoch = log_.records.size() + 1;
  r.teacher_loss = epoch_teacher_n_ ? epoch_teacher_sum_ / epoch_teacher_n_ : 0.0;
  r.student_loss = epoch_student_n_ ? epoch_student_sum_ / epoch_student_n_ : 0.0;
  if (evaluate_after) {
    const MetricsReport m = evaluate(*model_, eval_ ? *eval_ : train_);
    r.instance_auc = m.instance_auc;
    r.bag_auc = m.bag_auc;
  } else {
    r.instance_auc = r.bag_auc = std::nan("");
  }
  if (cfg_.record_time)
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log_.records.push_back(r);
  return r;
}

void Trainer::write_checkpoint(const std::string& name) const {
  save_checkpoint(*model_, cfg_, (std::filesystem::path(cfg_.out_dir) / name).string());
}

void Trainer::run(const TrainCallbacks& cb) {
  cb_ = cb;
  if (!cfg_.out_dir.empty()) std::filesystem::create_directories(cfg_.out_dir);
  for (std::size_t e = 0; e < cfg_.epochs; ++e) {
    const EpochRecord r = epoch();
    if (cb_.on_epoch) cb_.on_epoch(r, *model_);
    if (!cfg_.out_dir.empty() && cfg_.checkpoint_every && r.epoch % cfg_.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_epoch_%03zu.dsck", r.epoch);
      write_checkpoint(name);
    }
  }
  if (!cfg_.out_dir.empty()) {
    write_checkpoint("model.dsck");
    std::ofstream(std::filesystem::path(cfg_.out_dir) / "train_log.csv") << log_.to_csv();
  }
  cb_ = {};
}

TrainResult train(const TrainConfig& cfg, const BagDataset& train_set, const BagDataset* eval,
                  const TrainCallbacks& cb) {
  Trainer t(cfg, train_set, eval);
  t.run(cb);
  TrainResult r;
  r.log = t.log();
  r.model = t.release_model();
  return r;
}

void save_checkpoint(const DsaglModel& model, const TrainConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open checkpoint '" + path + "' for writing");
  out.write("DSCK", 4);
  io::write_u8(out, kCheckpointVersion);
  TrainConfig c = cfg;
  c.model = model.config();
  const std::string text = config_to_text(c);
  io::write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto& entries = model.params().entries();
  io::write_u64(out, entries.size());
  for (const auto& [name, v] : entries) {
    io::write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, v.value());
  }
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

LoadedModel read_checkpoint(std::istream& in) {
  std::uint64_t off = 0;
  char magic[4];
  io::read_bytes(in, magic, 4, off);
  if (std::memcmp(magic, "DSCK", 4) != 0) throw FormatError("bad magic, expected DSCK", 0);
  const std::uint64_t vpos = off;
  const auto version = io::read_u8(in, off);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), vpos);
  const std::uint64_t tpos = off;
  const std::uint64_t len = io::read_u64(in, off);
  if (len > (1u << 20)) throw FormatError("implausible config length", tpos);
  std::string text(len, '\0');
  io::read_bytes(in, text.data(), len, off);
  LoadedModel lm;
  lm.config = parse_config(text);
  lm.model = std::make_unique<DsaglModel>(lm.config.model, 0);
  const auto& entries = lm.model->params().entries();
  std::set<std::string> seen;
  const std::uint64_t cpos = off;
  const std::uint64_t count = io::read_u64(in, off);
  if (count != entries.size())
    throw FormatError("checkpoint holds " + std::to_string(count) + " parameters, config expects " +
                      std::to_string(entries.size()),
                      cpos);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t npos = off;
    const std::uint64_t nlen = io::read_u64(in, off);
    if (nlen > 4096) throw FormatError("implausible parameter name length", npos);
    std::string name(nlen, '\0');
    io::read_bytes(in, name.data(), nlen, off);
    const std::uint64_t dpos = off;
    Tensor t = read_tensor(in, off);
    const Var* p = lm.model->params().find(name);
    if (!p) throw FormatError("checkpoint parameter '" + name + "' is not part of the configured model", npos);
    if (!seen.insert(name).second) throw FormatError("checkpoint repeats parameter '" + name + "'", npos);
    if (t.shape() != p->shape())
      throw DataError("checkpoint/config mismatch for '" + name + "': stored shape " + shape_str(t.shape()) +
                       ", config expects " + shape_str(p->shape()) + " (at byte offset " + std::to_string(dpos) +
                       ")");
    const_cast<Var*>(p)->mutable_value() = std::move(t);
  }
  return lm;
}

LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace dsagl
