// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <complex>

#include "dsagl/error.hpp"
#include "dsagl/ops.hpp"
#include "dsagl/ssm.hpp"
#include "helpers.hpp"

using namespace dsagl;
using namespace dsagl::ssm;
using testing::random_tensor;

namespace {

SSMParams random_system(Rng& rng, std::size_t n, bool diagonal, double delta) {
  SSMParams p;
  p.A = Tensor({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i == j) p.A[i * n + j] = rng.uniform(-1.0, -0.1);
      else if (!diagonal) p.A[i * n + j] = rng.uniform(-0.3, 0.3);
  p.B = random_tensor({n, 1}, rng);
  p.C = random_tensor({1, n}, rng);
  p.delta = delta;
  return p;
}

// Eigendecomposition ZOH: exp(dA) = V e^{dL} V^-1, B_bar = V diag(d phi1(d l)) V^-1 B.
void eigen_zoh(const SSMParams& p, Eigen::MatrixXd& A_bar, Eigen::VectorXd& B_bar) {
  const auto n = static_cast<Eigen::Index>(p.state_dim());
  Eigen::MatrixXd A(n, n);
  Eigen::VectorXd B(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    B(i) = p.B[i];
    for (Eigen::Index j = 0; j < n; ++j) A(i, j) = p.A[i * n + j];
  }
  Eigen::EigenSolver<Eigen::MatrixXd> es(A);
  const Eigen::MatrixXcd V = es.eigenvectors();
  const Eigen::MatrixXcd Vi = V.inverse();
  Eigen::VectorXcd e(n), f(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::complex<double> z = p.delta * es.eigenvalues()(i);
    e(i) = std::exp(z);
    f(i) = std::abs(z) < 1e-8 ? p.delta * (1.0 + z / 2.0) : p.delta * (std::exp(z) - 1.0) / z;
  }
  A_bar = (V * e.asDiagonal() * Vi).real();
  B_bar = (V * f.asDiagonal() * Vi * B.cast<std::complex<double>>()).real();
}

double softplus(double v) { return v > 30 ? v : std::log1p(std::exp(v)); }

SelectiveProjections random_projections(Rng& rng, std::size_t D, std::size_t N, bool trainable) {
  auto mk = [&](Shape s, double lo, double hi) {
    Tensor t = random_tensor(std::move(s), rng, lo, hi);
    return trainable ? parameter(t) : constant(t);
  };
  SelectiveProjections p;
  p.w_delta = mk({D, D}, -0.5, 0.5);
  p.b_delta = mk({D}, -0.5, 0.5);
  p.w_b = mk({N, D}, -0.5, 0.5);
  p.b_b = mk({N}, -0.5, 0.5);
  p.w_c = mk({N, D}, -0.5, 0.5);
  p.b_c = mk({N}, -0.5, 0.5);
  p.a_log = mk({D, N}, -1.0, 0.5);
  return p;
}

// Step-by-step scalar reference of the selective scan for x[L,D].
Tensor scan_oracle(const Tensor& x, const SelectiveProjections& p) {
  const std::size_t L = x.dim(0), D = x.dim(1), N = p.state_dim();
  const Tensor &wd = p.w_delta.value(), &bd = p.b_delta.value(), &wb = p.w_b.value(), &bb = p.b_b.value(),
               &wc = p.w_c.value(), &bc = p.b_c.value(), &al = p.a_log.value();
  Tensor y({L, D});
  std::vector<double> h(D * N, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    std::vector<double> bt(N), ct(N);
    for (std::size_t n = 0; n < N; ++n) {
      double sb = bb[n], sc = bc[n];
      for (std::size_t k = 0; k < D; ++k) {
        sb += wb[n * D + k] * x[t * D + k];
        sc += wc[n * D + k] * x[t * D + k];
      }
      bt[n] = sb;
      ct[n] = sc;
    }
    for (std::size_t d = 0; d < D; ++d) {
      double s = bd[d];
      for (std::size_t k = 0; k < D; ++k) s += wd[d * D + k] * x[t * D + k];
      const double dt = softplus(s);
      double out = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double a = -std::exp(al[d * N + n]);
        const double abar = std::exp(dt * a);
        const double bbar = (abar - 1.0) / a;  // dt * phi1(dt a)
        double& hs = h[d * N + n];
        hs = abar * hs + bbar * bt[n] * x[t * D + d];
        out += ct[n] * hs;
      }
      y[t * D + d] = out;
    }
  }
  return y;
}

}  // namespace

TEST_CASE("zoh closed-form scalar cases") {
  SSMParams p;
  p.A = Tensor({1, 1}, 0.0);
  p.B = Tensor({1, 1}, 5.0);
  p.C = Tensor({1, 1}, 1.0);
  p.delta = 0.1;
  SSMDiscrete d = discretize_zoh(p);
  CHECK(d.A_bar[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(d.B_bar[0] == doctest::Approx(0.5).epsilon(1e-14));

  p.A = Tensor({1, 1}, 1.0);
  p.B = Tensor({1, 1}, 4.0);
  p.delta = std::log(2.0);
  d = discretize_zoh(p);
  CHECK(std::abs(d.A_bar[0] - 2.0) < 1e-12);
  CHECK(std::abs(d.B_bar[0] - 4.0) < 1e-12);

  p.A = Tensor({2, 2}, std::vector<double>{-1.0, 0.5, 0.2, -2.0});
  p.B = Tensor({2, 1}, 1.0);
  p.C = Tensor({1, 2}, 1.0);
  p.delta = 1e-300;
  d = discretize_zoh(p);
  CHECK(d.A_bar[0] == 1.0);
  CHECK(d.A_bar[1] == doctest::Approx(0.5e-300).epsilon(1e-12));
  CHECK(d.A_bar[3] == 1.0);
  CHECK(std::abs(d.B_bar[0]) < 1e-290);
}

TEST_CASE("zoh branches agree with an eigendecomposition oracle") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + rng.below(8);
    const bool diag = seed % 2 == 0;
    // Small norms exercise the series branch, large ones the direct branch.
    const double delta = seed % 4 < 2 ? rng.uniform(0.01, 0.3) : rng.uniform(0.8, 3.0);
    SSMParams p = random_system(rng, n, diag, delta);
    Eigen::MatrixXd A_ref;
    Eigen::VectorXd B_ref;
    eigen_zoh(p, A_ref, B_ref);
    for (ZohBranch br : {ZohBranch::automatic, ZohBranch::series, ZohBranch::direct}) {
      if (br == ZohBranch::series && delta > 0.5) continue;
      SSMDiscrete d = discretize_zoh(p, br);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(std::abs(d.B_bar[i] - B_ref(static_cast<Eigen::Index>(i))) < 1e-8);
        for (std::size_t j = 0; j < n; ++j)
          CHECK(std::abs(d.A_bar[i * n + j] - A_ref(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) <
                1e-8);
      }
    }
  }
}

TEST_CASE("zoh rejects invalid parameters and overflow") {
  SSMParams p;
  p.A = Tensor({1, 1}, -1.0);
  p.B = Tensor({1, 1}, 1.0);
  p.C = Tensor({1, 1}, 1.0);
  p.delta = 0.0;
  CHECK_THROWS_AS(discretize_zoh(p), ShapeError);
  p.delta = 1.0;
  p.B = Tensor({2, 1}, 1.0);
  CHECK_THROWS_AS(discretize_zoh(p), ShapeError);
  p.B = Tensor({1, 1}, 1.0);
  p.A = Tensor({1, 1}, 800.0);
  try {
    discretize_zoh(p);
    FAIL("expected overflow");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("800") != std::string::npos);
  }
}

TEST_CASE("phi1 is smooth across the series switch") {
  for (double z : {-3.0, -0.6, -0.5 - 1e-12, -0.5, -0.2, -1e-9, 0.0, 1e-9, 0.3, 0.5, 0.9, 4.0}) {
    CAPTURE(z);
    const double ref = z == 0.0 ? 1.0 : std::expm1(z) / z;
    CHECK(std::abs(phi1(z) - ref) < 1e-14 * std::max(1.0, std::abs(ref)));
    const double h = 1e-5;
    const double fd = (phi1(z + h) - phi1(z - h)) / (2 * h);
    CHECK(std::abs(phi1_derivative(z) - fd) < 1e-8);
  }
  CHECK(phi1_derivative(0.0) == doctest::Approx(0.5));
}

TEST_CASE("recurrence and kernel convolution agree on 50 random systems") {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t n = 1 + rng.below(8), L = 1 + rng.below(64);
    SSMParams p = random_system(rng, n, seed % 2 == 0, rng.uniform(0.05, 2.0));
    SSMDiscrete d = discretize_zoh(p);
    Tensor x = random_tensor({L}, rng);
    Tensor y1 = ssm_recurrence(d, x);
    Tensor y2 = ssm_conv_apply(ssm_kernel(d, L), x);
    worst = std::max(worst, max_abs_diff(y1, y2));
  }
  CHECK(worst < 1e-9);
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() < 5.0);
}

TEST_CASE("kernel and recurrence trivial cases") {
  Rng rng(3);
  SSMDiscrete d = discretize_zoh(random_system(rng, 4, false, 0.7));
  Tensor k1 = ssm_kernel(d, 1).taps;
  double cb = 0.0;
  for (std::size_t i = 0; i < 4; ++i) cb += d.C[i] * d.B_bar[i];
  CHECK(k1[0] == doctest::Approx(cb).epsilon(1e-14));

  Tensor zeros({9});
  CHECK(ssm_recurrence(d, zeros) == Tensor({9}, 0.0));
  CHECK(ssm_conv_apply(ssm_kernel(d, 9), zeros) == Tensor({9}, 0.0));

  Tensor impulse({16});
  impulse[0] = 1.0;
  SSMKernel k = ssm_kernel(d, 16);
  CHECK(max_abs_diff(ssm_recurrence(d, impulse), k.taps) < 1e-15);
  CHECK(max_abs_diff(ssm_conv_apply(k, impulse), k.taps) == 0.0);

  SSMDiscrete id = d;
  id.A_bar = Tensor({4, 4});
  for (std::size_t i = 0; i < 4; ++i) id.A_bar[i * 5] = 1.0;
  Tensor taps = ssm_kernel(id, 6).taps;
  for (std::size_t i = 0; i < 6; ++i) CHECK(taps[i] == doctest::Approx(cb).epsilon(1e-14));

  CHECK_THROWS_AS(ssm_conv_apply(ssm_kernel(d, 5), Tensor({6})), ShapeError);
}

TEST_CASE("gradients of the three evaluation forms") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(77 + seed);
    SSMDiscrete d = discretize_zoh(random_system(rng, 3, seed % 2 == 0, 0.6));
    Var A = parameter(d.A_bar), B = parameter(d.B_bar), C = parameter(d.C);
    Var x = parameter(random_tensor({7}, rng));
    Tensor w = random_tensor({7}, rng);
    const Var ps[] = {A, B, C, x};
    auto probe = [&](Graph& g, const Var& y) { return ops::sum(g, ops::mul(g, y, constant(w))); };
    CHECK(finite_diff_check_params([&](Graph& g) { return probe(g, ssm_recurrence(g, A, B, C, x)); }, ps, 1e-6) <
          1e-6);
    CHECK(finite_diff_check_params(
              [&](Graph& g) { return probe(g, ssm_conv_apply(g, ssm_kernel(g, A, B, C, 7), x)); }, ps, 1e-6) <
          1e-6);
  }
}

TEST_CASE("selective scan matches the scalar reference") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 40);
    const std::size_t L = 12, D = 3, N = 1 + rng.below(4);
    SelectiveProjections p = random_projections(rng, D, N, false);
    Tensor x = random_tensor({L, D}, rng);
    CHECK(max_abs_diff(selective_scan(x, p), scan_oracle(x, p)) < 1e-9);
  }
}

TEST_CASE("selective scan with frozen projections reduces to the time-invariant system") {
  Rng rng(8);
  const std::size_t L = 10, D = 2, N = 3;
  SelectiveProjections p = random_projections(rng, D, N, false);
  const double delta = 0.4;
  p.w_delta = constant(Tensor({D, D}, 0.0));
  p.b_delta = constant(Tensor({D}, std::log(std::expm1(delta))));
  p.w_b = constant(Tensor({N, D}, 0.0));
  p.w_c = constant(Tensor({N, D}, 0.0));
  Tensor x = random_tensor({L, D}, rng);
  Tensor y = selective_scan(x, p);
  for (std::size_t d = 0; d < D; ++d) {
    SSMParams sp;
    sp.A = Tensor({N, N});
    sp.B = Tensor({N, 1});
    sp.C = Tensor({1, N});
    for (std::size_t n = 0; n < N; ++n) {
      sp.A[n * N + n] = -std::exp(p.a_log.value()[d * N + n]);
      sp.B[n] = p.b_b.value()[n];
      sp.C[n] = p.b_c.value()[n];
    }
    sp.delta = delta;
    Tensor xd({L});
    for (std::size_t t = 0; t < L; ++t) xd[t] = x[t * D + d];
    Tensor ref = ssm_recurrence(discretize_zoh(sp), xd);
    for (std::size_t t = 0; t < L; ++t) CHECK(std::abs(y[t * D + d] - ref[t]) < 1e-12);
  }
}

TEST_CASE("selective scan of zero input with zero biases is zero") {
  Rng rng(4);
  SelectiveProjections p = random_projections(rng, 3, 2, false);
  p.b_b = constant(Tensor({2}, 0.0));
  p.b_c = constant(Tensor({2}, 0.0));
  Tensor y = selective_scan(Tensor({5, 3}, 0.0), p);
  CHECK(y == Tensor({5, 3}, 0.0));
}

TEST_CASE("selective scan is causal") {
  Rng rng(21);
  const std::size_t L = 16, D = 3;
  SelectiveProjections p = random_projections(rng, D, 4, false);
  Tensor x = random_tensor({L, D}, rng);
  Tensor y = selective_scan(x, p);
  for (std::size_t t = 0; t < L; ++t) {
    Tensor x2 = x;
    for (std::size_t d = 0; d < D; ++d) x2[t * D + d] += 0.5;
    Tensor y2 = selective_scan(x2, p);
    for (std::size_t s = 0; s < t * D; ++s) CHECK(y2[s] == y[s]);
    bool changed = false;
    for (std::size_t d = 0; d < D; ++d) changed |= y2[t * D + d] != y[t * D + d];
    CHECK(changed);
  }
}

TEST_CASE("selective scan gradients over projections and input") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(500 + seed);
    SelectiveProjections p = random_projections(rng, 3, 2, true);
    Var x = parameter(random_tensor({2, 5, 3}, rng));
    Tensor w = random_tensor({2, 5, 3}, rng);
    const Var ps[] = {x, p.w_delta, p.b_delta, p.w_b, p.b_b, p.w_c, p.b_c, p.a_log};
    const double err = finite_diff_check_params(
        [&](Graph& g) { return ops::sum(g, ops::mul(g, selective_scan(g, x, p), constant(w))); }, ps, 1e-6);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("selective scan core gradient through small and large delta") {
  Rng rng(9);
  const std::size_t Bn = 1, L = 4, D = 2, N = 2;
  Var u = parameter(random_tensor({Bn, L, D}, rng));
  Tensor dv = random_tensor({Bn, L, D}, rng, 1e-4, 3.0);
  dv[0] = 1e-6;  // near the removable singularity of phi1
  Var delta = parameter(dv);
  Var A = parameter(random_tensor({D, N}, rng, -2.0, -0.1));
  Var b = parameter(random_tensor({Bn, L, N}, rng));
  Var c = parameter(random_tensor({Bn, L, N}, rng));
  const Var ps[] = {u, delta, A, b, c};
  const double err = finite_diff_check_params(
      [&](Graph& g) { return ops::sum(g, selective_scan_core(g, u, delta, A, b, c)); }, ps, 1e-7);
  CHECK(err < 1e-6);
}

TEST_CASE("selective scan rejects channel mismatch") {
  Rng rng(1);
  SelectiveProjections p = random_projections(rng, 3, 2, false);
  CHECK_THROWS_AS(selective_scan(Tensor({4, 2}), p), ShapeError);
}
