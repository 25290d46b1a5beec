// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "dsagl/ablation.hpp"
#include "dsagl/config.hpp"
#include "dsagl/error.hpp"
#include "dsagl/export.hpp"
#include "dsagl/tensor.hpp"
#include "dsagl/metrics.hpp"
#include "dsagl/training.hpp"

using namespace dsagl;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 2;
  c.model.encoder.stem_channels = 4;
  c.model.encoder.stem_layers = 1;
  c.model.encoder.state_dim = 2;
  c.model.encoder.feature_dim = 37;
  c.model.fasa.channels = 3;
  c.model.fasa.attention_hidden = 4;
  return c;
}

BagDataset tiny_data(std::uint64_t seed = 3, std::size_t bags = 8, std::size_t size = 4) {
  SyntheticConfig s;
  s.num_bags = bags;
  s.bag_size = size;
  s.patch_side = 8;
  s.blob_radius = 2;
  s.seed = seed;
  return gen_synthetic_bags(s);
}

std::vector<Tensor> snapshot(const std::vector<Var>& vs) {
  std::vector<Tensor> out;
  for (const auto& v : vs) out.push_back(v.value());
  return out;
}

bool same(const std::vector<Var>& vs, const std::vector<Tensor>& ts) {
  for (std::size_t i = 0; i < vs.size(); ++i)
    if (!(vs[i].value() == ts[i])) return false;
  return true;
}

bool bit_identical(const TrainLog& a, const TrainLog& b) { return a.to_csv() == b.to_csv(); }

}  // namespace

TEST_CASE("sgd closed forms") {
  Var p = parameter(Tensor::from({0.0}));
  p.node()->grad_buffer()[0] = 1.0;
  Sgd sgd(0.1, 0.0);
  const Var ps[] = {p};
  sgd.step(ps);
  CHECK(p.value()[0] == doctest::Approx(-0.1).epsilon(1e-15));

  Var q = parameter(Tensor::from({1.0}));
  const Var qs[] = {q};
  for (int i = 0; i < 100; ++i) {
    q.zero_grad();
    q.node()->grad_buffer()[0] = q.value()[0];
    sgd.step(qs);
  }
  CHECK(std::abs(q.value()[0] - std::pow(0.9, 100)) < 1e-15);
}

TEST_CASE("adam first step moves by the learning rate") {
  for (double g : {1.0, -3.0, 1e-4}) {
    Var p = parameter(Tensor::from({0.5}));
    p.node()->grad_buffer()[0] = g;
    Adam adam(0.01, 0.0);
    const Var ps[] = {p};
    adam.step(ps);
    const double moved = p.value()[0] - 0.5;
    CHECK(std::abs(std::abs(moved) - 0.01) < 1e-5);
    CHECK((moved < 0) == (g > 0));
  }
  CHECK_THROWS_AS(Adam(0.0, 0.0), ConfigError);
  CHECK_THROWS_AS(make_optimizer("rmsprop", 0.1, 0.0), ConfigError);
  CHECK(dynamic_cast<Sgd*>(make_optimizer("sgd", 0.1, 0.0).get()) != nullptr);
}

TEST_CASE("adam keeps separate state per parameter") {
  Var a = parameter(Tensor::from({0.0})), b = parameter(Tensor::from({0.0}));
  Adam adam(0.1, 0.0);
  const Var pa[] = {a}, pb[] = {b};
  a.node()->grad_buffer()[0] = 1.0;
  adam.step(pa);
  adam.step(pa);
  b.node()->grad_buffer()[0] = 1.0;
  adam.step(pb);
  CHECK(std::abs(b.value()[0] + 0.1) < 1e-6);
  CHECK(std::abs(a.value()[0] + 0.2) < 1e-6);
}

TEST_CASE("student step leaves teacher-exclusive parameters untouched") {
  BagDataset ds = tiny_data();
  TrainConfig c = tiny_config();
  c.teacher_update_interval = 3;
  Trainer t(c, ds);
  const std::size_t batch[] = {0, 1};
  std::size_t teacher_steps = 0;
  for (int s = 0; s < 6; ++s) {
    const auto teacher = snapshot(t.model().teacher_params());
    const auto encoder = snapshot(t.model().encoder_params());
    const auto student = snapshot(t.model().student_params());
    const std::size_t before = t.log().teacher_phases;
    t.step(batch);
    const bool had_teacher = t.log().teacher_phases > before;
    teacher_steps += had_teacher;
    CHECK(had_teacher == (s % 3 == 0));
    CHECK(same(t.model().teacher_params(), teacher) == !had_teacher);
    CHECK(!same(t.model().encoder_params(), encoder));
    CHECK(!same(t.model().student_params(), student));
  }
  CHECK(teacher_steps == 2);
}

TEST_CASE("teacher phase count is ceil(S/K)") {
  BagDataset ds = tiny_data(5, 10, 3);
  for (std::size_t K : {1u, 2u, 3u, 4u, 7u}) {
    CAPTURE(K);
    TrainConfig c = tiny_config();
    c.teacher_update_interval = K;
    c.epochs = 2;
    c.batch_size = 3;  // 4 steps per epoch, the last one short
    TrainResult r = train(c, ds);
    CHECK(r.log.steps == 8);
    CHECK(r.log.teacher_phases == (8 + K - 1) / K);
  }
}

TEST_CASE("frozen encoder paths") {
  BagDataset ds = tiny_data();
  TrainConfig c = tiny_config();
  c.teacher_update_interval = 1;
  c.student_updates_encoder = false;
  c.teacher_updates_encoder = false;
  Trainer t(c, ds);
  const auto enc = snapshot(t.model().encoder_params());
  const std::size_t batch[] = {2, 3};
  t.step(batch);
  CHECK(same(t.model().encoder_params(), enc));
}

TEST_CASE("single stream trains without teacher phases") {
  BagDataset ds = tiny_data();
  TrainConfig c = tiny_config();
  c.model.dual_stream = false;
  Trainer t(c, ds);
  const auto teacher = snapshot(t.model().teacher_params());
  t.epoch();
  CHECK(t.log().teacher_phases == 0);
  CHECK(same(t.model().teacher_params(), teacher));
}

TEST_CASE("fixed seed reproduces the training log") {
  BagDataset ds = tiny_data();
  TrainConfig c = tiny_config();
  c.model.encoder.dropout = 0.2;
  TrainResult a = train(c, ds), b = train(c, ds);
  CHECK(bit_identical(a.log, b.log));
  for (std::size_t i = 0; i < a.model->params().size(); ++i)
    CHECK(a.model->params().entries()[i].second.value() == b.model->params().entries()[i].second.value());
  c.seed = 8;
  CHECK(!bit_identical(a.log, train(c, ds).log));
  for (const auto& r : a.log.records) {
    CHECK(std::isfinite(r.teacher_loss));
    CHECK(std::isfinite(r.student_loss));
    CHECK(r.seconds == 0.0);
  }
  CHECK(a.log.records.size() == 2);
  CHECK(a.log.records[1].epoch == 2);
}

TEST_CASE("pseudo labels") {
  BagDataset ds = tiny_data();
  TrainConfig c = tiny_config();
  DsaglModel m(c.model, 1);
  const Bag& bag = ds.bags[0];
  const auto z = generate_pseudo_labels(m, bag);
  CHECK(z.size() == bag.size());
  CHECK(z == generate_pseudo_labels(m, bag));
  const Tensor before = m.params().find("fasa.attn_w.w")->value();
  Tensor& w = const_cast<Var*>(m.params().find("fasa.attn_w.w"))->mutable_value();
  w[0] += 0.5;
  CHECK(generate_pseudo_labels(m, bag) != z);
  w = before;

  Bag one = bag;
  one.instances = Tensor({1, 1, 8, 8});
  for (std::size_t k = 0; k < 64; ++k) one.instances[k] = bag.instances[k];
  one.instance_labels = {bag.instance_labels[0]};
  CHECK(generate_pseudo_labels(m, one) == std::vector<double>{0.5});

  Rng rng(4);
  CHECK(apply_pseudo_label_mode(PseudoLabelMode::soft, z, bag, rng) == z);
  CHECK(apply_pseudo_label_mode(PseudoLabelMode::hard, z, bag, rng) == binarize(z));
  const auto gt = apply_pseudo_label_mode(PseudoLabelMode::ground_truth, z, bag, rng);
  for (std::size_t j = 0; j < bag.size(); ++j) CHECK(gt[j] == bag.instance_labels[j]);
  std::size_t ones = 0, total = 0;
  for (int rep = 0; rep < 200; ++rep)
    for (double v : apply_pseudo_label_mode(PseudoLabelMode::random, z, bag, rng)) {
      CHECK((v == 0.0 || v == 1.0));
      ones += v == 1.0;
      ++total;
    }
  CHECK(std::abs(static_cast<double>(ones) / total - 0.5) < 0.06);
}

TEST_CASE("checkpoint round trip") {
  BagDataset ds = tiny_data();
  TrainConfig c = tiny_config();
  c.epochs = 1;
  TrainResult r = train(c, ds);
  std::stringstream buf;
  const std::string path = "test_training_roundtrip.dsck";
  save_checkpoint(*r.model, c, path);
  LoadedModel lm = load_checkpoint(path);
  CHECK(config_to_text(lm.config) == config_to_text(c));
  for (std::size_t i = 0; i < r.model->params().size(); ++i) {
    CHECK(lm.model->params().entries()[i].first == r.model->params().entries()[i].first);
    CHECK(lm.model->params().entries()[i].second.value() == r.model->params().entries()[i].second.value());
  }
  const MetricsReport a = evaluate(*r.model, ds), b = evaluate(*lm.model, ds);
  CHECK(a.instance_auc == b.instance_auc);
  CHECK(a.bag_auc == b.bag_auc);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_checkpoint("does/not/exist.dsck"), DataError);
}

TEST_CASE("checkpoint corruption and mismatch") {
  TrainConfig c = tiny_config();
  DsaglModel m(c.model, 1);
  const std::string path = "test_training_bad.dsck";
  save_checkpoint(m, c, path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  std::remove(path.c_str());

  auto load = [](const std::string& b) {
    std::istringstream in(b);
    return read_checkpoint(in);
  };
  CHECK_NOTHROW(load(bytes));
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(load(bad), FormatError);
  bad = bytes;
  bad[4] = 9;
  CHECK_THROWS_AS(load(bad), FormatError);
  CHECK_THROWS_AS(load(bytes.substr(0, bytes.size() - 5)), FormatError);

  // Rewrite the stored config so the model it builds has a wider feature_dim.
  const std::string key = "feature_dim = 37";
  const auto at = bytes.find(key);
  REQUIRE(at != std::string::npos);
  bad = bytes;
  bad.replace(at, key.size(), "feature_dim = 38");
  try {
    load(bad);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("mismatch") != std::string::npos);
  }

  // Duplicate parameter name: copy the first record's name into the second.
  std::uint64_t off = 4 + 1;
  std::istringstream in(bytes);
  in.seekg(static_cast<std::streamoff>(off));
  const std::uint64_t tlen = io::read_u64(in, off);
  off += tlen;
  in.seekg(static_cast<std::streamoff>(off));
  io::read_u64(in, off);  // count
  const std::uint64_t first = off;
  const std::uint64_t n1 = io::read_u64(in, off);
  std::string name1(n1, '\0');
  io::read_bytes(in, name1.data(), n1, off);
  read_tensor(in, off);
  const std::uint64_t second = off;
  const std::uint64_t n2 = io::read_u64(in, off);
  if (n2 == n1) {
    bad = bytes;
    bad.replace(second + 8, n2, name1);
    CHECK_THROWS_AS(load(bad), FormatError);
  }
  (void)first;
}

TEST_CASE("trainer rejects mismatched input channels") {
  BagDataset ds = tiny_data();
  TrainConfig c = tiny_config();
  c.model.encoder.in_channels = 3;
  CHECK_THROWS_AS(Trainer(c, ds), ConfigError);
}

TEST_CASE("pseudo labels improve and attention localizes positives") {
  const AblationBenchmark bench = AblationBenchmark::standard();
  int improved = 0, localized = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto [tr, ev] = ablation_data(bench, seed);
    TrainConfig c = bench.base;
    c.seed = seed;
    Trainer t(c, tr, &ev);
    auto pseudo_auc = [&] {
      std::vector<double> s;
      std::vector<int> y;
      for (const Bag& b : tr.bags) {
        if (b.label == 0) continue;
        const auto z = generate_pseudo_labels(t.model(), b);
        s.insert(s.end(), z.begin(), z.end());
        y.insert(y.end(), b.instance_labels.begin(), b.instance_labels.end());
      }
      return auc(s, y);
    };
    t.epoch(false);
    const double first = pseudo_auc();
    for (std::size_t e = 1; e < c.epochs; ++e) t.epoch(false);
    const double last = pseudo_auc();
    double on_pos = 0.0, on_neg = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (const Bag& b : ev.bags) {
      if (b.label == 0) continue;
      const BagAttention a = bag_attention(t.model(), b);
      for (std::size_t j = 0; j < b.size(); ++j) (b.instance_labels[j] ? on_pos : on_neg) += a.weights[j];
      for (auto z : b.instance_labels) (z ? n_pos : n_neg) += 1;
    }
    const double mp = on_pos / n_pos, mn = on_neg / n_neg;
    MESSAGE("seed " << seed << ": pseudo-label AUC " << first << " -> " << last << ", attention " << mp << " vs "
                    << mn);
    improved += last > first;
    localized += mp > mn;
  }
  CHECK(improved >= 8);
  CHECK(localized >= 8);
}
