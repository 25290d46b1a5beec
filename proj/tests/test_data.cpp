// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "dsagl/data.hpp"
#include "dsagl/dualstream.hpp"
#include "dsagl/error.hpp"
#include "dsagl/metrics.hpp"

using namespace dsagl;

namespace {

double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        good += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return good / pairs;
}

SyntheticConfig small(std::uint64_t seed = 1) {
  SyntheticConfig c;
  c.num_bags = 6;
  c.bag_size = 5;
  c.patch_side = 8;
  c.blob_radius = 2;
  c.seed = seed;
  return c;
}

std::string bytes_of(const BagDataset& ds) {
  std::ostringstream o;
  write_dataset(o, ds);
  return o.str();
}

BagDataset parse(const std::string& b) {
  std::istringstream in(b);
  return read_dataset(in);
}

}  // namespace

TEST_CASE("generated bags satisfy the max rule and positive counts") {
  SyntheticConfig c;
  c.num_bags = 40;
  c.bag_size = 20;
  c.positive_ratio = 0.2;
  BagDataset ds = gen_synthetic_bags(c);
  CHECK(ds.bags.size() == 40);
  for (const Bag& b : ds.bags) {
    int mx = 0;
    std::size_t pos = 0;
    for (auto z : b.instance_labels) {
      mx = std::max<int>(mx, z);
      pos += z;
    }
    CHECK(b.label == mx);
    CHECK(b.label == (b.bag_id % 2 == 0 ? 1 : 0));
    CHECK(pos == (b.label ? 4u : 0u));
    CHECK(b.instances.shape() == Shape{20, 1, 12, 12});
  }
  CHECK_NOTHROW(ds.validate());

  c.positive_ratio = 1.0;
  c.bag_size = 8;
  for (const Bag& b : gen_synthetic_bags(c).bags)
    if (b.label)
      for (auto z : b.instance_labels) CHECK(z == 1);
  c.positive_ratio = 0.01;
  CHECK(c.positives_per_bag() == 1);
}

TEST_CASE("generator config validation") {
  SyntheticConfig c = small();
  c.num_bags = 5;
  CHECK_THROWS_AS(gen_synthetic_bags(c), ConfigError);
  c = small();
  c.positive_ratio = 0.0;
  CHECK_THROWS_AS(gen_synthetic_bags(c), ConfigError);
  c = small();
  c.patch_side = 4;
  CHECK_THROWS_AS(gen_synthetic_bags(c), ConfigError);
  c = small();
  c.amplitude_spread = 1.5;
  CHECK_THROWS_AS(gen_synthetic_bags(c), ConfigError);
}

TEST_CASE("generation is reproducible and seed dependent") {
  CHECK(bytes_of(gen_synthetic_bags(small(3))) == bytes_of(gen_synthetic_bags(small(3))));
  CHECK(bytes_of(gen_synthetic_bags(small(3))) != bytes_of(gen_synthetic_bags(small(4))));
  // Bags draw from their own streams, so a prefix of a larger set matches.
  SyntheticConfig big = small(3);
  big.num_bags = 10;
  BagDataset a = gen_synthetic_bags(small(3)), b = gen_synthetic_bags(big);
  for (std::size_t i = 0; i < a.bags.size(); ++i) CHECK(a.bags[i].instances == b.bags[i].instances);
}

TEST_CASE("amplitude spread only changes positive patches") {
  SyntheticConfig c = small(5);
  SyntheticConfig s = c;
  s.amplitude_spread = 0.8;
  BagDataset a = gen_synthetic_bags(c), b = gen_synthetic_bags(s);
  for (std::size_t i = 0; i < a.bags.size(); ++i) {
    CHECK(a.bags[i].instance_labels == b.bags[i].instance_labels);
    if (!a.bags[i].label) CHECK(a.bags[i].instances == b.bags[i].instances);
  }
}

TEST_CASE("dataset round trip through a file") {
  BagDataset ds = gen_synthetic_bags(small());
  const std::string path = "test_data_roundtrip.dsgl";
  save_dataset(ds, path);
  BagDataset back = load_dataset(path);
  std::remove(path.c_str());
  CHECK(bytes_of(back) == bytes_of(ds));
  CHECK(back.seed == ds.seed);
  CHECK(back.positive_ratio == ds.positive_ratio);
  for (std::size_t i = 0; i < ds.bags.size(); ++i) {
    CHECK(back.bags[i].instances == ds.bags[i].instances);
    CHECK(back.bags[i].instance_labels == ds.bags[i].instance_labels);
  }
  CHECK_THROWS_AS(load_dataset("no/such/file.dsgl"), DataError);
}

TEST_CASE("corrupt dataset files are rejected with offsets") {
  const std::string good = bytes_of(gen_synthetic_bags(small()));
  std::string bad = good;
  bad[1] = 'X';
  CHECK_THROWS_AS(parse(bad), FormatError);
  bad = good;
  bad[4] = 2;
  try {
    parse(bad);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 4);
  }
  CHECK_THROWS_AS(parse(good.substr(0, good.size() - 3)), FormatError);
  CHECK_THROWS_AS(parse(good.substr(0, 10)), FormatError);

  // Header (4+1+8+8+8) then the first bag: id, N.
  const std::size_t n_at = 29 + 8;
  bad = good;
  for (int k = 0; k < 8; ++k) bad[n_at + k] = 0;
  CHECK_THROWS_AS(parse(bad), FormatError);

  // Bag label byte disagreeing with its instances.
  bad = good;
  bad[n_at + 8] = 0;
  CHECK_THROWS_AS(parse(bad), FormatError);
}

TEST_CASE("index lookup and validation") {
  BagDataset ds = gen_synthetic_bags(small());
  CHECK(ds.index_of(3) == 3);
  CHECK_THROWS_AS(ds.index_of(99), DataError);
  BagDataset broken = ds;
  broken.bags[0].label = 0;
  CHECK_THROWS_AS(broken.validate(), DataError);
  BagDataset empty;
  CHECK_THROWS_AS(empty.validate(), DataError);
  CHECK(ds.instance_count() == 30);
}

TEST_CASE("summary reports counts and the realised ratio") {
  SyntheticConfig c = small();
  c.positive_ratio = 0.4;
  const std::string s = dataset_summary(gen_synthetic_bags(c));
  CHECK(s.find("bags: 6\n") != std::string::npos);
  CHECK(s.find("positive_bags: 3\n") != std::string::npos);
  CHECK(s.find("positive_instances: 6\n") != std::string::npos);
  CHECK(s.find("realized_ratio: 0.4\n") != std::string::npos);
}

TEST_CASE("auc examples") {
  auto A = [](std::vector<double> s, std::vector<int> y) { return auc(s, y); };
  CHECK(A({0.9, 0.8, 0.3, 0.1}, {1, 1, 0, 0}) == 1.0);
  CHECK(A({0.5, 0.5}, {1, 0}) == 0.5);
  CHECK(A({0.9, 0.2, 0.8, 0.1}, {1, 0, 0, 1}) == 0.5);
  CHECK_THROWS_AS(A({0.1, 0.2}, {1, 1}), SingleClassError);
  CHECK_THROWS_AS(A({0.1, 0.2}, {0, 0}), DataError);
  CHECK_THROWS_AS(A({0.1}, {1, 0}), ShapeError);
  CHECK_THROWS_AS(A({0.1, std::nan("")}, {1, 0}), NumericError);
}

TEST_CASE("auc agrees with the pair-count oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(40);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(trial % 2 ? 5 : 1000)) / 7.0;  // odd trials are tie heavy
      y[i] = static_cast<int>(rng.below(2));
    }
    y[0] = 1;
    y[1] = 0;
    const double a = auc(s, y);
    CHECK(std::abs(a - brute_auc(s, y)) < 1e-12);

    std::vector<double> e(n), f(n);
    for (std::size_t i = 0; i < n; ++i) {
      e[i] = std::exp(s[i]);
      f[i] = 3.0 * s[i] - 2.0;
    }
    CHECK(auc(e, y) == a);
    CHECK(auc(f, y) == a);
  }
}

TEST_CASE("auc complements under label flip without ties") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 4 + rng.below(20);
    std::vector<double> s(n);
    std::vector<int> y(n), fy(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = rng.uniform();
      y[i] = i < 2 ? static_cast<int>(i) : static_cast<int>(rng.below(2));
      fy[i] = 1 - y[i];
    }
    CHECK(std::abs(auc(s, y) + auc(s, fy) - 1.0) < 1e-12);
  }
}

TEST_CASE("evaluate degenerate and oracle cases") {
  BagDataset ds = gen_synthetic_bags(small());
  ModelConfig mc;
  mc.encoder.stem_channels = 3;
  mc.encoder.feature_dim = 37;
  mc.fasa.channels = 3;
  DsaglModel m(mc, 2);
  m.ps_w.mutable_value().fill(0.0);
  m.ps_b.mutable_value().fill(0.0);
  m.pt_w.mutable_value().fill(0.0);
  m.pt_b.mutable_value().fill(0.0);
  MetricsReport r = evaluate(m, ds);
  CHECK(r.instance_auc == 0.5);
  CHECK(r.bag_auc == 0.5);
  CHECK(r.bags == 6);
  CHECK(r.instances == 30);

  Predictions p = predict(m, ds);
  for (std::size_t i = 0; i < p.instance_scores.size(); ++i) p.instance_scores[i] = p.instance_labels[i];
  for (std::size_t i = 0; i < p.bag_scores.size(); ++i) p.bag_scores[i] = p.bag_labels[i];
  r = report(p);
  CHECK(r.instance_auc == 1.0);
  CHECK(r.bag_auc == 1.0);
  CHECK(p.attention.size() == 6);

  DsaglModel m2(mc, 3);
  Predictions q = predict(m2, ds);
  r = report(q);
  CHECK(std::abs(r.instance_auc - brute_auc(q.instance_scores, q.instance_labels)) < 1e-12);
  CHECK(std::abs(r.bag_auc - brute_auc(q.bag_scores, q.bag_labels)) < 1e-12);
}

TEST_CASE("metrics formatting") {
  MetricsReport r;
  r.instance_auc = 0.75;
  r.bag_auc = 1.0;
  r.bags = 4;
  r.instances = 40;
  CHECK(r.csv_row() == "0.75,1,4,40");
  CHECK(r.table().find("instance_auc  0.7500") != std::string::npos);
}
