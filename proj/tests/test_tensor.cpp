// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "dsagl/autograd.hpp"
#include "dsagl/error.hpp"
#include "dsagl/ops.hpp"
#include "helpers.hpp"

using namespace dsagl;
using testing::random_tensor;

namespace {

// Reduces any op output to a scalar with fixed random weights so every
// output element contributes a distinct gradient.
Var probe(Graph& g, const Var& y, std::uint64_t seed) {
  Rng r(seed);
  return ops::sum(g, ops::mul(g, y, constant(random_tensor(y.shape(), r))));
}

Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor* b, std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), k = w.dim(2);
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  Tensor y({B, O, Ho, Wo});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double s = b ? (*b)[o] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long yy = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                s += x[((n * C + c) * H + yy) * W + xx] * w[((o * C + c) * k + u) * k + v];
              }
          y[((n * O + o) * Ho + i) * Wo + j] = s;
        }
  return y;
}

}  // namespace

TEST_CASE("tensor construction and shape contracts") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t[5] == 1.5);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
  CHECK_THROWS_AS(t.item(), ShapeError);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK(Tensor::scalar(4.0).item() == 4.0);
  Tensor bad({2});
  bad[1] = std::nan("");
  CHECK_FALSE(bad.all_finite());
}

TEST_CASE("tensor dump round trip is bit exact") {
  Rng rng(11);
  Tensor t = random_tensor({3, 1, 4, 5}, rng);
  t[0] = -0.0;
  t[1] = 1e-310;
  std::stringstream ss;
  write_tensor(ss, t);
  std::uint64_t off = 0;
  Tensor back = read_tensor(ss, off);
  CHECK(back == t);
  CHECK(std::signbit(back[0]));
  CHECK(off == 8 + 4 * 8 + t.size() * 8);
}

TEST_CASE("truncated tensor dump reports the offset") {
  Rng rng(2);
  std::stringstream ss;
  write_tensor(ss, random_tensor({4}, rng));
  std::string bytes = ss.str();
  bytes.resize(bytes.size() - 3);
  std::stringstream in(bytes);
  std::uint64_t off = 0;
  CHECK_THROWS_AS(read_tensor(in, off), FormatError);
}

TEST_CASE("conv2d matches a nested-loop oracle over random configurations") {
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    Rng rng(seed);
    const std::size_t B = 1 + rng.below(3), C = 1 + rng.below(3), O = 1 + rng.below(4);
    const std::size_t k = 1 + 2 * rng.below(3), stride = 1 + rng.below(2), pad = rng.below(k);
    const std::size_t H = k + rng.below(6), W = k + rng.below(6);
    Tensor x = random_tensor({B, C, H, W}, rng), w = random_tensor({O, C, k, k}, rng), b = random_tensor({O}, rng);
    Graph g;
    Tensor y = ops::conv2d(g, constant(x), constant(w), constant(b), stride, pad).value();
    Tensor ref = conv_oracle(x, w, &b, stride, pad);
    REQUIRE(y.shape() == ref.shape());
    CHECK(max_abs_diff(y, ref) < 1e-12);
    Tensor y2 = ops::conv2d(g, constant(x), constant(w), Var(), stride, pad).value();
    CHECK(max_abs_diff(y2, conv_oracle(x, w, nullptr, stride, pad)) < 1e-12);
  }
}

TEST_CASE("conv2d gradients agree with finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const std::size_t k = 1 + 2 * rng.below(2), stride = 1 + rng.below(2), pad = rng.below(k);
    Var x = parameter(random_tensor({2, 2, 5, 4}, rng));
    Var w = parameter(random_tensor({3, 2, k, k}, rng));
    Var b = parameter(random_tensor({3}, rng));
    const Var ps[] = {x, w, b};
    const double err = finite_diff_check_params(
        [&](Graph& g) { return probe(g, ops::conv2d(g, x, w, b, stride, pad), seed); }, ps, 1e-5);
    CHECK(err < 1e-7);
  }
}

TEST_CASE("conv2d rejects mismatched channels") {
  Graph g;
  CHECK_THROWS_AS(ops::conv2d(g, constant(Tensor({1, 2, 4, 4})), constant(Tensor({1, 3, 3, 3})), Var(), 1, 1),
                  ShapeError);
}

TEST_CASE("elementwise and reduction gradients") {
  using Op = Var (*)(Graph&, const Var&);
  struct Case {
    const char* name;
    Op op;
  };
  const Case cases[] = {
      {"relu", [](Graph& g, const Var& a) { return ops::relu(g, a); }},
      {"sigmoid", [](Graph& g, const Var& a) { return ops::sigmoid(g, a); }},
      {"tanh", [](Graph& g, const Var& a) { return ops::tanh(g, a); }},
      {"softplus", [](Graph& g, const Var& a) { return ops::softplus(g, a); }},
      {"exp", [](Graph& g, const Var& a) { return ops::exp(g, a); }},
      {"log_eps", [](Graph& g, const Var& a) { return ops::log_eps(g, ops::exp(g, a)); }},
      {"scale", [](Graph& g, const Var& a) { return ops::scale(g, a, -2.5); }},
      {"add_scalar", [](Graph& g, const Var& a) { return ops::add_scalar(g, a, 0.7); }},
      {"mean", [](Graph& g, const Var& a) { return ops::mean(g, a); }},
      {"max_all", [](Graph& g, const Var& a) { return ops::max_all(g, a); }},
      {"softmax0", [](Graph& g, const Var& a) { return ops::softmax(g, a, 0); }},
      {"softmax1", [](Graph& g, const Var& a) { return ops::softmax(g, a, 1); }},
      {"log_softmax1", [](Graph& g, const Var& a) { return ops::log_softmax(g, a, 1); }},
      {"column", [](Graph& g, const Var& a) { return ops::column(g, a, 2); }},
      {"slice", [](Graph& g, const Var& a) { return ops::slice_rows(g, a, 1, 3); }},
      {"reshape", [](Graph& g, const Var& a) { return ops::reshape(g, a, {3, 4}); }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed * 31 + 7);
      // Away from the relu kink and the max tie.
      Tensor x = random_tensor({4, 3}, rng);
      for (std::size_t i = 0; i < x.size(); ++i)
        if (std::abs(x[i]) < 0.05) x[i] += 0.1;
      const double err = finite_diff_check([&](Graph& g, const Var& a) { return probe(g, c.op(g, a), seed); }, x, 1e-6);
      CHECK(err < 1e-6);
    }
  }
}

TEST_CASE("binary op, matmul and linear gradients") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed + 50);
    Var a = parameter(random_tensor({3, 4}, rng));
    Var b = parameter(random_tensor({3, 4}, rng));
    Var m = parameter(random_tensor({4, 2}, rng));
    Var w = parameter(random_tensor({5, 4}, rng));
    Var bias = parameter(random_tensor({5}, rng));
    const Var ps[] = {a, b, m, w, bias};
    const double err = finite_diff_check_params(
        [&](Graph& g) {
          Var s = ops::add(g, ops::mul(g, a, b), ops::sub(g, a, b));
          Var l1 = probe(g, ops::matmul(g, s, m), seed);
          Var l2 = probe(g, ops::linear(g, a, w, bias), seed + 1);
          return ops::add(g, l1, l2);
        },
        ps, 1e-6);
    CHECK(err < 1e-7);
  }
}

TEST_CASE("spatial op gradients") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed + 900);
    Var x = parameter(random_tensor({2, 3, 5, 5}, rng));
    Var gate_c = parameter(random_tensor({2, 3}, rng));
    Var gate_s = parameter(random_tensor({2, 1, 5, 5}, rng));
    const Var ps[] = {x, gate_c, gate_s};
    const double err = finite_diff_check_params(
        [&](Graph& g) {
          Var acc = probe(g, ops::global_avg_pool(g, x), seed);
          acc = ops::add(g, acc, probe(g, ops::global_max_pool(g, x), seed + 1));
          acc = ops::add(g, acc, probe(g, ops::channel_mean(g, x), seed + 2));
          acc = ops::add(g, acc, probe(g, ops::channel_max(g, x), seed + 3));
          acc = ops::add(g, acc, probe(g, ops::concat_channels(g, x, x), seed + 4));
          acc = ops::add(g, acc, probe(g, ops::scale_channels(g, x, gate_c), seed + 5));
          acc = ops::add(g, acc, probe(g, ops::scale_spatial(g, x, gate_s), seed + 6));
          acc = ops::add(g, acc, probe(g, ops::pad_to_multiple(g, x, 4), seed + 7));
          Var seq = ops::to_sequence(g, x);
          acc = ops::add(g, acc, probe(g, ops::from_sequence(g, ops::scale(g, seq, 2.0), 5, 5), seed + 8));
          return acc;
        },
        ps, 1e-6);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("conv1d_same and concat_rows gradients") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed + 300);
    Var x = parameter(random_tensor({3, 7}, rng));
    Var w = parameter(random_tensor({3}, rng));
    Var b = parameter(random_tensor({1}, rng));
    Var y = parameter(random_tensor({2, 7}, rng));
    const Var ps[] = {x, w, b, y};
    const double err = finite_diff_check_params(
        [&](Graph& g) {
          const Var parts[] = {ops::conv1d_same(g, x, w, b), y};
          return probe(g, ops::concat_rows(g, parts), seed);
        },
        ps, 1e-6);
    CHECK(err < 1e-7);
  }
}

TEST_CASE("to_sequence uses raster order") {
  Tensor x({1, 2, 2, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  Graph g;
  Tensor s = ops::to_sequence(g, constant(x)).value();
  REQUIRE(s.shape() == Shape{1, 6, 2});
  // position (r, c) holds channel values x[0,:,r,c]
  CHECK(s[2 * 4 + 0] == x[0 * 6 + 1 * 3 + 1]);
  CHECK(s[2 * 4 + 1] == x[1 * 6 + 1 * 3 + 1]);
  CHECK(ops::from_sequence(g, constant(s), 2, 3).value() == x);
}

TEST_CASE("softmax is stable for large inputs and sums to one") {
  Graph g;
  Tensor x = Tensor::from({1000.0, 999.0, -1000.0});
  Tensor s = ops::softmax(g, constant(x), 0).value();
  CHECK(s.all_finite());
  CHECK(std::abs(s[0] + s[1] + s[2] - 1.0) < 1e-15);
  CHECK(s[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("dropout") {
  Rng rng(5);
  Tensor x = random_tensor({1000}, rng);
  Graph g;
  Rng a(9), b(9);
  CHECK(ops::dropout(g, constant(x), 0.3, false, a).value() == x);
  Tensor d1 = ops::dropout(g, constant(x), 0.3, true, a).value();
  Tensor d2 = ops::dropout(g, constant(x), 0.3, true, b).value();
  CHECK(d1 == d2);  // eval mode consumes no randomness
  Rng c(10);
  CHECK_FALSE(ops::dropout(g, constant(x), 0.3, true, c).value() == d2);
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (d2[i] == 0.0) ++dropped;
    else CHECK(d2[i] == doctest::Approx(x[i] / 0.7));
  }
  CHECK(dropped > 230);
  CHECK(dropped < 370);

  Var p = parameter(x);
  Graph g2;
  Rng m(9);
  Var y = ops::dropout(g2, p, 0.3, true, m);
  g2.backward(ops::sum(g2, y));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(p.grad()[i] == (d2[i] == 0.0 ? 0.0 : 1.0 / 0.7));
}

TEST_CASE("non-recording graph yields constants") {
  Var p = parameter(Tensor::from({1.0, 2.0}));
  Graph g(false);
  Var y = ops::scale(g, p, 3.0);
  CHECK_FALSE(y.requires_grad());
  CHECK(g.size() == 0);
  CHECK(y.value()[1] == 6.0);
}

TEST_CASE("leaf gradients accumulate across backward calls") {
  Var p = parameter(Tensor::from({1.0, -2.0}));
  for (int i = 0; i < 2; ++i) {
    Graph g;
    g.backward(ops::sum(g, ops::mul(g, p, p)));
  }
  CHECK(p.grad()[0] == 4.0);
  CHECK(p.grad()[1] == -8.0);
  p.zero_grad();
  CHECK(p.grad()[0] == 0.0);
}

TEST_CASE("backward requires a scalar loss") {
  Var p = parameter(Tensor::from({1.0, 2.0}));
  Graph g;
  CHECK_THROWS_AS(g.backward(ops::scale(g, p, 2.0)), ShapeError);
}
