// SPDX-License-Identifier: Apache-2.0
#include "dsagl/ssm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "dsagl/error.hpp"
#include "dsagl/ops.hpp"

namespace dsagl::ssm {

namespace {

using Mat = std::vector<double>;  // row-major n x n

Mat matmul_sq(const Mat& a, const Mat& b, std::size_t n) {
  Mat c(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const double av = a[i * n + k];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * b[k * n + j];
    }
  return c;
}

Mat identity(std::size_t n) {
  Mat m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) m[i * n + i] = 1.0;
  return m;
}

double inf_norm(const Mat& m, std::size_t n) {
  double best = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += std::abs(m[i * n + j]);
    best = std::max(best, row);
  }
  return best;
}

Mat expm(const Mat& m, std::size_t n) {
  const double norm = inf_norm(m, n);
  if (!std::isfinite(norm)) throw NumericError("matrix_exp: non-finite input");
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const double s = std::ldexp(1.0, -squarings);
  Mat a(m);
  for (auto& v : a) v *= s;
  Mat result = identity(n);
  Mat term = identity(n);
  for (int k = 1; k <= 20; ++k) {
    term = matmul_sq(term, a, n);
    for (auto& v : term) v /= k;
    for (std::size_t i = 0; i < n * n; ++i) result[i] += term[i];
  }
  for (int i = 0; i < squarings; ++i) result = matmul_sq(result, result, n);
  return result;
}

// Solves a x = rhs by partial-pivot elimination. False when a is singular.
bool solve(Mat a, std::vector<double>& rhs, std::size_t n) {
  const double scale = std::max(inf_norm(a, n), 1e-300);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (std::abs(a[piv * n + col]) <= 1e-13 * scale) return false;
    if (piv != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a[piv * n + j], a[col * n + j]);
      std::swap(rhs[piv], rhs[col]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / a[col * n + col];
      if (f == 0.0) continue;
      for (std::size_t j = col; j < n; ++j) a[r * n + j] -= f * a[col * n + j];
      rhs[r] -= f * rhs[col];
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = rhs[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= a[i * n + j] * rhs[j];
    rhs[i] = s / a[i * n + i];
  }
  return true;
}

double factorial(int m) {
  double f = 1.0;
  for (int i = 2; i <= m; ++i) f *= i;
  return f;
}

// kInvFactorial[m] = 1/m!
constexpr auto kInvFactorial = [] {
  std::array<double, kSeriesTerms + 2> t{};
  double f = 1.0;
  for (int m = 0; m < kSeriesTerms + 2; ++m) {
    if (m > 0) f *= m;
    t[m] = 1.0 / f;
  }
  return t;
}();

}  // namespace

void SSMParams::validate() const {
  if (A.rank() != 2 || A.dim(0) != A.dim(1))
    throw ShapeError("SSMParams: A must be square, got " + shape_str(A.shape()));
  const std::size_t n = A.dim(0);
  if (B.shape() != Shape{n, 1}) throw ShapeError("SSMParams: B must be [N,1], got " + shape_str(B.shape()));
  if (C.shape() != Shape{1, n}) throw ShapeError("SSMParams: C must be [1,N], got " + shape_str(C.shape()));
  if (!(delta > 0.0) || !std::isfinite(delta)) throw ShapeError("SSMParams: delta must be positive");
  if (!A.all_finite() || !B.all_finite() || !C.all_finite())
    throw ShapeError("SSMParams: A, B, C must be finite");
}

Tensor matrix_exp(const Tensor& m) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1))
    throw ShapeError("matrix_exp: square matrix required, got " + shape_str(m.shape()));
  const std::size_t n = m.dim(0);
  Mat a(m.data().begin(), m.data().end());
  return Tensor({n, n}, expm(a, n));
}

SSMDiscrete discretize_zoh(const SSMParams& params, ZohBranch branch) {
  params.validate();
  const std::size_t n = params.state_dim();
  Mat z(params.A.data().begin(), params.A.data().end());
  for (auto& v : z) v *= params.delta;
  std::vector<double> db(params.B.data().begin(), params.B.data().end());
  for (auto& v : db) v *= params.delta;

  const double norm = inf_norm(z, n);
  Mat a_bar = expm(z, n);
  double a_norm = inf_norm(a_bar, n);
  if (!std::isfinite(a_norm))
    throw NumericError("discretize_zoh: exp(delta*A) overflowed, ||delta*A||_inf = " + std::to_string(norm));

  if (branch == ZohBranch::automatic)
    branch = norm < kSeriesThreshold ? ZohBranch::series : ZohBranch::direct;

  std::vector<double> b_bar(n, 0.0);
  if (branch == ZohBranch::series) {
    // sum_{m>=1} z^{m-1}/m! applied to delta*B
    std::vector<double> term = db;
    for (int m = 1; m <= kSeriesTerms; ++m) {
      const double inv = 1.0 / factorial(m);
      for (std::size_t i = 0; i < n; ++i) b_bar[i] += term[i] * inv;
      std::vector<double> next(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) next[i] += z[i * n + j] * term[j];
      term = std::move(next);
    }
  } else {
    std::vector<double> rhs(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) rhs[i] += (a_bar[i * n + j] - (i == j ? 1.0 : 0.0)) * db[j];
    if (solve(z, rhs, n)) {
      b_bar = std::move(rhs);
    } else {
      // Singular dA: the top-right block of exp([[dA, dB], [0, 0]]) is B_bar.
      const std::size_t m = n + 1;
      Mat aug(m * m, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) aug[i * m + j] = z[i * n + j];
        aug[i * m + n] = db[i];
      }
      const Mat e = expm(aug, m);
      for (std::size_t i = 0; i < n; ++i) b_bar[i] = e[i * m + n];
    }
  }
  for (double v : b_bar)
    if (!std::isfinite(v))
      throw NumericError("discretize_zoh: B_bar is non-finite, ||delta*A||_inf = " + std::to_string(norm));

  return SSMDiscrete{Tensor({n, n}, std::move(a_bar)), Tensor({n, 1}, std::move(b_bar)), params.C};
}

double phi1(double z) {
  if (std::abs(z) < kSeriesThreshold) {
    // Horner form of sum_{k<12} z^k / (k+1)!
    double s = kInvFactorial[kSeriesTerms];
    for (int k = kSeriesTerms - 1; k >= 1; --k) s = s * z + kInvFactorial[k];
    return s;
  }
  return std::expm1(z) / z;
}

double phi1_derivative(double z) {
  if (std::abs(z) < kSeriesThreshold) {
    // sum_{k=1..12} k z^{k-1} / (k+1)!
    double s = kSeriesTerms * kInvFactorial[kSeriesTerms + 1];
    for (int k = kSeriesTerms - 1; k >= 1; --k) s = s * z + k * kInvFactorial[k + 1];
    return s;
  }
  return (z * std::exp(z) - std::expm1(z)) / (z * z);
}

namespace {

// exp(z), phi1(z) and optionally phi1'(z) sharing one exponential.
inline void exp_phi(double z, double& e, double& ph) {
  e = std::exp(z);
  ph = std::abs(z) < kSeriesThreshold ? phi1(z) : (e - 1.0) / z;
}

inline double phi1_derivative_from(double z, double e, double ph) {
  return std::abs(z) < kSeriesThreshold ? phi1_derivative(z) : (e - ph) / z;
}

}  // namespace

Var ssm_recurrence(Graph& g, const Var& A_bar, const Var& B_bar, const Var& C, const Var& x) {
  const std::size_t n = A_bar.dim(0);
  if (x.value().rank() != 1) throw ShapeError("ssm_recurrence: input must be 1-D, got " + shape_str(x.shape()));
  if (B_bar.shape() != Shape{n, 1} || C.shape() != Shape{1, n} || A_bar.shape() != Shape{n, n})
    throw ShapeError("ssm_recurrence: inconsistent system shapes");
  const std::size_t L = x.dim(0);
  Var h = constant(Tensor({n, 1}, 0.0));
  std::vector<Var> ys;
  ys.reserve(L);
  for (std::size_t t = 0; t < L; ++t) {
    Var xt = ops::reshape(g, ops::slice_rows(g, x, t, t + 1), {1, 1});
    h = ops::add(g, ops::matmul(g, A_bar, h), ops::matmul(g, B_bar, xt));
    ys.push_back(ops::reshape(g, ops::matmul(g, C, h), {1}));
  }
  return ops::concat_rows(g, ys);
}

Var ssm_kernel(Graph& g, const Var& A_bar, const Var& B_bar, const Var& C, std::size_t length) {
  if (length == 0) throw ShapeError("ssm_kernel: length must be >= 1");
  std::vector<Var> taps;
  taps.reserve(length);
  Var v = B_bar;
  for (std::size_t i = 0; i < length; ++i) {
    taps.push_back(ops::reshape(g, ops::matmul(g, C, v), {1}));
    if (i + 1 < length) v = ops::matmul(g, A_bar, v);
  }
  return ops::concat_rows(g, taps);
}

Var ssm_conv_apply(Graph& g, const Var& kernel, const Var& x) {
  if (kernel.value().rank() != 1 || x.value().rank() != 1)
    throw ShapeError("ssm_conv_apply: kernel and input must be 1-D");
  const std::size_t L = x.dim(0);
  if (kernel.dim(0) != L)
    throw ShapeError("ssm_conv_apply: kernel length " + std::to_string(kernel.dim(0)) +
                     " != input length " + std::to_string(L));
  Tensor out({L});
  for (std::size_t t = 0; t < L; ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i <= t; ++i) s += kernel.value()[i] * x.value()[t - i];
    out[t] = s;
  }
  return g.apply(std::move(out), {kernel, x}, [kernel, x, L](Node& self) {
    for (std::size_t t = 0; t < L; ++t) {
      const double gy = self.grad[t];
      for (std::size_t i = 0; i <= t; ++i) {
        if (kernel.requires_grad()) kernel.node()->grad_buffer()[i] += gy * x.value()[t - i];
        if (x.requires_grad()) x.node()->grad_buffer()[t - i] += gy * kernel.value()[i];
      }
    }
  });
}

Tensor ssm_recurrence(const SSMDiscrete& d, const Tensor& x) {
  Graph g;
  return ssm_recurrence(g, constant(d.A_bar), constant(d.B_bar), constant(d.C), constant(x)).value();
}

SSMKernel ssm_kernel(const SSMDiscrete& d, std::size_t length) {
  Graph g;
  return SSMKernel{ssm_kernel(g, constant(d.A_bar), constant(d.B_bar), constant(d.C), length).value()};
}

Tensor ssm_conv_apply(const SSMKernel& k, const Tensor& x) {
  Graph g;
  return ssm_conv_apply(g, constant(k.taps), constant(x)).value();
}

Var selective_scan_core(Graph& g, const Var& u, const Var& delta, const Var& A, const Var& b,
                        const Var& c) {
  if (u.value().rank() != 3) throw ShapeError("selective_scan: input must be [B,L,D], got " + shape_str(u.shape()));
  const std::size_t Bn = u.dim(0), L = u.dim(1), D = u.dim(2);
  if (A.value().rank() != 2 || A.dim(0) != D)
    throw ShapeError("selective_scan: A must be [D,N] with D=" + std::to_string(D) + ", got " +
                     shape_str(A.shape()));
  const std::size_t N = A.dim(1);
  if (delta.shape() != u.shape())
    throw ShapeError("selective_scan: delta shape " + shape_str(delta.shape()) + " != input shape " +
                     shape_str(u.shape()));
  const Shape bc{Bn, L, N};
  if (b.shape() != bc || c.shape() != bc)
    throw ShapeError("selective_scan: B and C must be " + shape_str(bc));

  const double* U = u.value().ptr();
  const double* DL = delta.value().ptr();
  const double* AV = A.value().ptr();
  const double* BV = b.value().ptr();
  const double* CV = c.value().ptr();

  Tensor y({Bn, L, D});
  // States h_t for every step, kept for the reverse pass.
  Tensor hs({Bn, L, D, N});
  for (std::size_t bi = 0; bi < Bn; ++bi)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t n = 0; n < N; ++n) {
        const double a = AV[d * N + n];
        double h = 0.0;
        for (std::size_t t = 0; t < L; ++t) {
          const std::size_t td = (bi * L + t) * D + d;
          const std::size_t tn = (bi * L + t) * N + n;
          const double dt = DL[td];
          const double z = dt * a;
          double e, ph;
          exp_phi(z, e, ph);
          h = e * h + dt * ph * BV[tn] * U[td];
          hs[((bi * L + t) * D + d) * N + n] = h;
          y[td] += CV[tn] * h;
        }
      }
  if (!y.all_finite()) throw NumericError("selective_scan: non-finite state");

  return g.apply(std::move(y), {u, delta, A, b, c}, [u, delta, A, b, c, hs = std::move(hs), Bn, L, D, N](Node& self) {
    const double* U = u.value().ptr();
    const double* DL = delta.value().ptr();
    const double* AV = A.value().ptr();
    const double* BV = b.value().ptr();
    const double* CV = c.value().ptr();
    const double* G = self.grad.ptr();
    double* GU = u.requires_grad() ? u.node()->grad_buffer().ptr() : nullptr;
    double* GD = delta.requires_grad() ? delta.node()->grad_buffer().ptr() : nullptr;
    double* GA = A.requires_grad() ? A.node()->grad_buffer().ptr() : nullptr;
    double* GB = b.requires_grad() ? b.node()->grad_buffer().ptr() : nullptr;
    double* GC = c.requires_grad() ? c.node()->grad_buffer().ptr() : nullptr;
    for (std::size_t bi = 0; bi < Bn; ++bi)
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t n = 0; n < N; ++n) {
          const double a = AV[d * N + n];
          double gh = 0.0;       // dL/dh_t accumulated from the future
          double a_next = 0.0;   // abar_{t+1}
          for (std::size_t t = L; t-- > 0;) {
            const std::size_t td = (bi * L + t) * D + d;
            const std::size_t tn = (bi * L + t) * N + n;
            const double h = hs[td * N + n];
            const double h_prev = t > 0 ? hs[((bi * L + t - 1) * D + d) * N + n] : 0.0;
            const double dt = DL[td];
            const double z = dt * a;
            double abar, ph;
            exp_phi(z, abar, ph);
            gh = G[td] * CV[tn] + a_next * gh;
            if (GC) GC[tn] += G[td] * h;
            const double g_abar = gh * h_prev;
            const double g_bbar = gh * U[td];  // bbar = dt*phi(z)*b
            if (GU) GU[td] += gh * dt * ph * BV[tn];
            if (GB) GB[tn] += g_bbar * dt * ph;
            const double dph = phi1_derivative_from(z, abar, ph);
            if (GD) GD[td] += g_abar * a * abar + g_bbar * BV[tn] * (ph + dt * dph * a);
            if (GA) GA[d * N + n] += g_abar * dt * abar + g_bbar * BV[tn] * dt * dph * dt;
            a_next = abar;
          }
        }
  });
}

Var selective_scan(Graph& g, const Var& x, const SelectiveProjections& p) {
  Var seq = x;
  const bool unbatched = x.value().rank() == 2;
  if (unbatched) seq = ops::reshape(g, x, {1, x.dim(0), x.dim(1)});
  if (seq.value().rank() != 3) throw ShapeError("selective_scan: input must be [L,D] or [B,L,D]");
  const std::size_t Bn = seq.dim(0), L = seq.dim(1), D = seq.dim(2), N = p.state_dim();
  if (p.channels() != D)
    throw ShapeError("selective_scan: projections expect " + std::to_string(p.channels()) +
                     " channels, input has " + std::to_string(D));
  Var flat = ops::reshape(g, seq, {Bn * L, D});
  Var delta = ops::reshape(g, ops::softplus(g, ops::linear(g, flat, p.w_delta, p.b_delta)), {Bn, L, D});
  Var bm = ops::reshape(g, ops::linear(g, flat, p.w_b, p.b_b), {Bn, L, N});
  Var cm = ops::reshape(g, ops::linear(g, flat, p.w_c, p.b_c), {Bn, L, N});
  Var A = ops::scale(g, ops::exp(g, p.a_log), -1.0);
  Var y = selective_scan_core(g, seq, delta, A, bm, cm);
  if (unbatched) y = ops::reshape(g, y, {L, D});
  return y;
}

Tensor selective_scan(const Tensor& x, const SelectiveProjections& p) {
  Graph g;
  SelectiveProjections frozen{constant(p.w_delta.value()), constant(p.b_delta.value()),
                              constant(p.w_b.value()),     constant(p.b_b.value()),
                              constant(p.w_c.value()),     constant(p.b_c.value()),
                              constant(p.a_log.value())};
  return selective_scan(g, constant(x), frozen).value();
}

}  // namespace dsagl::ssm
