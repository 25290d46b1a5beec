// SPDX-License-Identifier: Apache-2.0
#include "dsagl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dsagl/error.hpp"

namespace dsagl::ops {

namespace {

void require_same(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void require_rank(const char* op, const Var& a, std::size_t rank, const char* what) {
  if (a.value().rank() != rank)
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_str(a.shape()));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

template <typename Fwd, typename Deriv>
Var unary(Graph& g, const Var& a, Fwd fwd, Deriv deriv) {
  Tensor out(a.shape());
  const auto& in = a.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return g.apply(std::move(out), {a}, [a, deriv](Node& self) {
    auto& ga = a.node()->grad_buffer();
    const auto& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += self.grad[i] * deriv(x[i], self.value[i]);
  });
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size())
    throw ShapeError("axis " + std::to_string(axis) + " invalid for shape " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Var add(Graph& g, const Var& a, const Var& b) {
  require_same("add", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return g.apply(std::move(out), {a, b}, [a, b](Node& self) {
    if (a.requires_grad()) {
      auto& ga = a.node()->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.node()->grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i];
    }
  });
}

Var sub(Graph& g, const Var& a, const Var& b) {
  require_same("sub", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return g.apply(std::move(out), {a, b}, [a, b](Node& self) {
    if (a.requires_grad()) {
      auto& ga = a.node()->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.node()->grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

Var mul(Graph& g, const Var& a, const Var& b) {
  require_same("mul", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return g.apply(std::move(out), {a, b}, [a, b](Node& self) {
    if (a.requires_grad()) {
      auto& ga = a.node()->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.node()->grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * a.value()[i];
    }
  });
}

Var scale(Graph& g, const Var& a, double s) {
  return unary(
      g, a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Graph& g, const Var& a, double c) {
  return unary(
      g, a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var relu(Graph& g, const Var& a) {
  return unary(
      g, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Graph& g, const Var& a) {
  return unary(
      g, a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Graph& g, const Var& a) {
  return unary(
      g, a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var softplus(Graph& g, const Var& a) {
  return unary(
      g, a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var exp(Graph& g, const Var& a) {
  return unary(
      g, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log_eps(Graph& g, const Var& a, double eps) {
  if (!(eps >= 0.0)) throw ShapeError("log_eps: eps must be non-negative");
  return unary(
      g, a, [eps](double x) { return std::log(x + eps); },
      [eps](double x, double) { return 1.0 / (x + eps); });
}

Var sum(Graph& g, const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return g.apply(Tensor::scalar(s), {a}, [a](Node& self) {
    auto& ga = a.node()->grad_buffer();
    const double d = self.grad[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d;
  });
}

Var mean(Graph& g, const Var& a) {
  return scale(g, sum(g, a), 1.0 / static_cast<double>(a.value().size()));
}

Var max_all(Graph& g, const Var& a) {
  const auto& v = a.value();
  std::size_t arg = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[arg]) arg = i;
  return g.apply(Tensor::scalar(v[arg]), {a}, [a, arg](Node& self) {
    a.node()->grad_buffer()[arg] += self.grad[0];
  });
}

Var reshape(Graph& g, const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return g.apply(std::move(out), {a}, [a](Node& self) {
    auto& ga = a.node()->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

Var softmax(Graph& g, const Var& a, std::size_t axis) {
  const auto sp = split_axis(a.shape(), axis);
  Tensor out(a.shape());
  const auto& x = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.extent * sp.inner + in;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.extent; ++k) m = std::max(m, x[base + k * sp.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.extent; ++k) {
        const double e = std::exp(x[base + k * sp.inner] - m);
        out[base + k * sp.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < sp.extent; ++k) out[base + k * sp.inner] /= z;
    }
  return g.apply(std::move(out), {a}, [a, sp](Node& self) {
    auto& ga = a.node()->grad_buffer();
    const auto& y = self.value;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.extent * sp.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.extent; ++k)
          dot += self.grad[base + k * sp.inner] * y[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.extent; ++k) {
          const std::size_t i = base + k * sp.inner;
          ga[i] += y[i] * (self.grad[i] - dot);
        }
      }
  });
}

Var log_softmax(Graph& g, const Var& a, std::size_t axis) {
  const auto sp = split_axis(a.shape(), axis);
  Tensor out(a.shape());
  const auto& x = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.extent * sp.inner + in;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.extent; ++k) m = std::max(m, x[base + k * sp.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.extent; ++k) z += std::exp(x[base + k * sp.inner] - m);
      const double lz = m + std::log(z);
      for (std::size_t k = 0; k < sp.extent; ++k)
        out[base + k * sp.inner] = x[base + k * sp.inner] - lz;
    }
  return g.apply(std::move(out), {a}, [a, sp](Node& self) {
    auto& ga = a.node()->grad_buffer();
    const auto& y = self.value;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.extent * sp.inner + in;
        double gs = 0.0;
        for (std::size_t k = 0; k < sp.extent; ++k) gs += self.grad[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.extent; ++k) {
          const std::size_t i = base + k * sp.inner;
          ga[i] += self.grad[i] - std::exp(y[i]) * gs;
        }
      }
  });
}

Var matmul(Graph& g, const Var& a, const Var& b) {
  require_rank("matmul", a, 2, "left operand");
  require_rank("matmul", b, 2, "right operand");
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  if (b.dim(0) != K)
    throw ShapeError("matmul: inner dimension mismatch, left has " + std::to_string(K) +
                     " columns, right has " + std::to_string(b.dim(0)) + " rows");
  Tensor out({M, N});
  const double* A = a.value().ptr();
  const double* B = b.value().ptr();
  double* C = out.ptr();
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const double av = A[i * K + k];
      for (std::size_t j = 0; j < N; ++j) C[i * N + j] += av * B[k * N + j];
    }
  return g.apply(std::move(out), {a, b}, [a, b, M, K, N](Node& self) {
    const double* G = self.grad.ptr();
    if (a.requires_grad()) {
      double* GA = a.node()->grad_buffer().ptr();
      const double* B = b.value().ptr();
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          double s = 0.0;
          for (std::size_t j = 0; j < N; ++j) s += G[i * N + j] * B[k * N + j];
          GA[i * K + k] += s;
        }
    }
    if (b.requires_grad()) {
      double* GB = b.node()->grad_buffer().ptr();
      const double* A = a.value().ptr();
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          const double av = A[i * K + k];
          for (std::size_t j = 0; j < N; ++j) GB[k * N + j] += av * G[i * N + j];
        }
    }
  });
}

Var linear(Graph& g, const Var& x, const Var& w, const Var& b) {
  require_rank("linear", x, 2, "input");
  require_rank("linear", w, 2, "weight");
  const std::size_t M = x.dim(0), K = x.dim(1), N = w.dim(0);
  if (w.dim(1) != K)
    throw ShapeError("linear: input features (" + std::to_string(K) +
                     ") != weight input features (" + std::to_string(w.dim(1)) + ")");
  if (b && (b.value().rank() != 1 || b.dim(0) != N))
    throw ShapeError("linear: bias shape " + shape_str(b.shape()) + " does not match output features " +
                     std::to_string(N));
  Tensor out({M, N});
  const double* X = x.value().ptr();
  const double* W = w.value().ptr();
  double* Y = out.ptr();
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double s = b ? b.value()[j] : 0.0;
      for (std::size_t k = 0; k < K; ++k) s += X[i * K + k] * W[j * K + k];
      Y[i * N + j] = s;
    }
  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(b);
  return g.apply(std::move(out), std::span<const Var>(inputs), [x, w, b, M, K, N](Node& self) {
    const double* G = self.grad.ptr();
    if (x.requires_grad()) {
      double* GX = x.node()->grad_buffer().ptr();
      const double* W = w.value().ptr();
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
          const double gv = G[i * N + j];
          for (std::size_t k = 0; k < K; ++k) GX[i * K + k] += gv * W[j * K + k];
        }
    }
    if (w.requires_grad()) {
      double* GW = w.node()->grad_buffer().ptr();
      const double* X = x.value().ptr();
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
          const double gv = G[i * N + j];
          for (std::size_t k = 0; k < K; ++k) GW[j * K + k] += gv * X[i * K + k];
        }
    }
    if (b && b.requires_grad()) {
      auto& gb = b.node()->grad_buffer();
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) gb[j] += G[i * N + j];
    }
  });
}

namespace {

struct ConvGeom {
  std::size_t B, C, H, W, O, k, stride, pad, OH, OW;
};

// Valid output range [lo, hi) for a kernel offset along one axis.
inline void valid_range(std::size_t kk, const ConvGeom& s, std::size_t in_extent,
                        std::size_t out_extent, std::size_t& lo, std::size_t& hi) {
  // in = o*stride + kk - pad must lie in [0, in_extent)
  lo = 0;
  if (kk < s.pad) lo = (s.pad - kk + s.stride - 1) / s.stride;
  const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(in_extent) - 1 +
                             static_cast<std::ptrdiff_t>(s.pad) - static_cast<std::ptrdiff_t>(kk);
  if (top < 0) {
    hi = 0;
    return;
  }
  hi = std::min(out_extent, static_cast<std::size_t>(top) / s.stride + 1);
  if (hi < lo) hi = lo;
}

// cols[(c*k + ki)*k + kj][oh*OW + ow] = x[c, oh*stride + ki - pad, ow*stride + kj - pad], 0 outside.
void im2col(const double* xp, const ConvGeom& s, double* cols) {
  const std::size_t P = s.OH * s.OW;
  std::fill(cols, cols + s.C * s.k * s.k * P, 0.0);
  for (std::size_t c = 0; c < s.C; ++c)
    for (std::size_t ki = 0; ki < s.k; ++ki) {
      std::size_t oh0, oh1;
      valid_range(ki, s, s.H, s.OH, oh0, oh1);
      for (std::size_t kj = 0; kj < s.k; ++kj) {
        std::size_t ow0, ow1;
        valid_range(kj, s, s.W, s.OW, ow0, ow1);
        double* cr = cols + ((c * s.k + ki) * s.k + kj) * P;
        for (std::size_t oh = oh0; oh < oh1; ++oh) {
          // unsigned wrap-around in `row` cancels once ow*stride is added
          const std::size_t row = (c * s.H + oh * s.stride + ki - s.pad) * s.W + kj - s.pad;
          for (std::size_t ow = ow0; ow < ow1; ++ow) cr[oh * s.OW + ow] = xp[row + ow * s.stride];
        }
      }
    }
}

void col2im_add(const double* cols, const ConvGeom& s, double* gx) {
  const std::size_t P = s.OH * s.OW;
  for (std::size_t c = 0; c < s.C; ++c)
    for (std::size_t ki = 0; ki < s.k; ++ki) {
      std::size_t oh0, oh1;
      valid_range(ki, s, s.H, s.OH, oh0, oh1);
      for (std::size_t kj = 0; kj < s.k; ++kj) {
        std::size_t ow0, ow1;
        valid_range(kj, s, s.W, s.OW, ow0, ow1);
        const double* cr = cols + ((c * s.k + ki) * s.k + kj) * P;
        for (std::size_t oh = oh0; oh < oh1; ++oh) {
          const std::size_t row = (c * s.H + oh * s.stride + ki - s.pad) * s.W + kj - s.pad;
          for (std::size_t ow = ow0; ow < ow1; ++ow) gx[row + ow * s.stride] += cr[oh * s.OW + ow];
        }
      }
    }
}

}  // namespace

Var conv2d(Graph& g, const Var& x, const Var& w, const Var& b, std::size_t stride,
           std::size_t padding) {
  require_rank("conv2d", x, 4, "input");
  require_rank("conv2d", w, 4, "kernel");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeom s{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, padding, 0, 0};
  if (w.dim(1) != s.C)
    throw ShapeError("conv2d: input channels (" + std::to_string(s.C) + ") != kernel channels (" +
                     std::to_string(w.dim(1)) + ")");
  if (w.dim(3) != s.k)
    throw ShapeError("conv2d: kernel must be square, got " + shape_str(w.shape()));
  if (s.k > s.H + 2 * padding)
    throw ShapeError("conv2d: kernel height " + std::to_string(s.k) + " exceeds padded input height " +
                     std::to_string(s.H + 2 * padding));
  if (s.k > s.W + 2 * padding)
    throw ShapeError("conv2d: kernel width " + std::to_string(s.k) + " exceeds padded input width " +
                     std::to_string(s.W + 2 * padding));
  if (b && (b.value().rank() != 1 || b.dim(0) != s.O))
    throw ShapeError("conv2d: bias shape " + shape_str(b.shape()) + " does not match output channels " +
                     std::to_string(s.O));
  s.OH = (s.H + 2 * padding - s.k) / stride + 1;
  s.OW = (s.W + 2 * padding - s.k) / stride + 1;

  Tensor out({s.B, s.O, s.OH, s.OW});
  const std::size_t R = s.C * s.k * s.k, P = s.OH * s.OW;
  std::vector<double> cols(R * P);
  const double* K = w.value().ptr();
  for (std::size_t bi = 0; bi < s.B; ++bi) {
    im2col(x.value().ptr() + bi * s.C * s.H * s.W, s, cols.data());
    double* yp = out.ptr() + bi * s.O * P;
    for (std::size_t o = 0; o < s.O; ++o) {
      double* yr = yp + o * P;
      if (b) std::fill(yr, yr + P, b.value()[o]);
      const double* kr = K + o * R;
      for (std::size_t r = 0; r < R; ++r) {
        const double kv = kr[r];
        const double* cr = cols.data() + r * P;
        for (std::size_t q = 0; q < P; ++q) yr[q] += kv * cr[q];
      }
    }
  }

  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(b);
  return g.apply(std::move(out), std::span<const Var>(inputs), [x, w, b, s](Node& self) {
    const std::size_t R = s.C * s.k * s.k, P = s.OH * s.OW;
    const double* G = self.grad.ptr();
    const double* K = w.value().ptr();
    double* GX = x.requires_grad() ? x.node()->grad_buffer().ptr() : nullptr;
    double* GK = w.requires_grad() ? w.node()->grad_buffer().ptr() : nullptr;
    std::vector<double> cols(R * P), dcols;
    if (GX) dcols.resize(R * P);
    for (std::size_t bi = 0; bi < s.B; ++bi) {
      const double* gp = G + bi * s.O * P;
      if (GK) {
        im2col(x.value().ptr() + bi * s.C * s.H * s.W, s, cols.data());
        for (std::size_t o = 0; o < s.O; ++o) {
          const double* gr = gp + o * P;
          for (std::size_t r = 0; r < R; ++r) {
            const double* cr = cols.data() + r * P;
            double acc = 0.0;
            for (std::size_t q = 0; q < P; ++q) acc += gr[q] * cr[q];
            GK[o * R + r] += acc;
          }
        }
      }
      if (GX) {
        std::fill(dcols.begin(), dcols.end(), 0.0);
        for (std::size_t o = 0; o < s.O; ++o) {
          const double* gr = gp + o * P;
          for (std::size_t r = 0; r < R; ++r) {
            const double kv = K[o * R + r];
            double* dr = dcols.data() + r * P;
            for (std::size_t q = 0; q < P; ++q) dr[q] += kv * gr[q];
          }
        }
        col2im_add(dcols.data(), s, GX + bi * s.C * s.H * s.W);
      }
    }
    if (b && b.requires_grad()) {
      auto& gb = b.node()->grad_buffer();
      for (std::size_t bi = 0; bi < s.B; ++bi)
        for (std::size_t o = 0; o < s.O; ++o) {
          const double* gr = G + (bi * s.O + o) * P;
          double acc = 0.0;
          for (std::size_t i = 0; i < P; ++i) acc += gr[i];
          gb[o] += acc;
        }
    }
  });
}

Var pad_to_multiple(Graph& g, const Var& x, std::size_t m) {
  require_rank("pad_to_multiple", x, 4, "input");
  if (m == 0) throw ShapeError("pad_to_multiple: multiple must be positive");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t PH = (H + m - 1) / m * m, PW = (W + m - 1) / m * m;
  if (PH == H && PW == W) return x;
  Tensor out({B, C, PH, PW});
  for (std::size_t p = 0; p < B * C; ++p)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) out[(p * PH + i) * PW + j] = x.value()[(p * H + i) * W + j];
  return g.apply(std::move(out), {x}, [x, B, C, H, W, PH, PW](Node& self) {
    auto& gx = x.node()->grad_buffer();
    for (std::size_t p = 0; p < B * C; ++p)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) gx[(p * H + i) * W + j] += self.grad[(p * PH + i) * PW + j];
  });
}

Var global_avg_pool(Graph& g, const Var& x) {
  require_rank("global_avg_pool", x, 4, "input");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out({B, C});
  for (std::size_t p = 0; p < B * C; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < HW; ++i) s += x.value()[p * HW + i];
    out[p] = s / static_cast<double>(HW);
  }
  return g.apply(std::move(out), {x}, [x, B, C, HW](Node& self) {
    auto& gx = x.node()->grad_buffer();
    for (std::size_t p = 0; p < B * C; ++p) {
      const double d = self.grad[p] / static_cast<double>(HW);
      for (std::size_t i = 0; i < HW; ++i) gx[p * HW + i] += d;
    }
  });
}

Var global_max_pool(Graph& g, const Var& x) {
  require_rank("global_max_pool", x, 4, "input");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out({B, C});
  std::vector<std::size_t> arg(B * C);
  for (std::size_t p = 0; p < B * C; ++p) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < HW; ++i)
      if (x.value()[p * HW + i] > x.value()[p * HW + best]) best = i;
    arg[p] = p * HW + best;
    out[p] = x.value()[arg[p]];
  }
  return g.apply(std::move(out), {x}, [x, arg = std::move(arg)](Node& self) {
    auto& gx = x.node()->grad_buffer();
    for (std::size_t p = 0; p < arg.size(); ++p) gx[arg[p]] += self.grad[p];
  });
}

Var channel_mean(Graph& g, const Var& x) {
  require_rank("channel_mean", x, 4, "input");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out({B, 1, x.dim(2), x.dim(3)});
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i) out[bi * HW + i] += x.value()[(bi * C + c) * HW + i];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= static_cast<double>(C);
  return g.apply(std::move(out), {x}, [x, B, C, HW](Node& self) {
    auto& gx = x.node()->grad_buffer();
    const double inv = 1.0 / static_cast<double>(C);
    for (std::size_t bi = 0; bi < B; ++bi)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) gx[(bi * C + c) * HW + i] += self.grad[bi * HW + i] * inv;
  });
}

Var channel_max(Graph& g, const Var& x) {
  require_rank("channel_max", x, 4, "input");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out({B, 1, x.dim(2), x.dim(3)});
  std::vector<std::size_t> arg(B * HW);
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t i = 0; i < HW; ++i) {
      std::size_t best = bi * C * HW + i;
      for (std::size_t c = 1; c < C; ++c) {
        const std::size_t idx = (bi * C + c) * HW + i;
        if (x.value()[idx] > x.value()[best]) best = idx;
      }
      arg[bi * HW + i] = best;
      out[bi * HW + i] = x.value()[best];
    }
  return g.apply(std::move(out), {x}, [x, arg = std::move(arg)](Node& self) {
    auto& gx = x.node()->grad_buffer();
    for (std::size_t p = 0; p < arg.size(); ++p) gx[arg[p]] += self.grad[p];
  });
}

Var concat_channels(Graph& g, const Var& a, const Var& b) {
  require_rank("concat_channels", a, 4, "first input");
  require_rank("concat_channels", b, 4, "second input");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t B = a.dim(0), CA = a.dim(1), CB = b.dim(1), HW = a.dim(2) * a.dim(3);
  Tensor out({B, CA + CB, a.dim(2), a.dim(3)});
  for (std::size_t bi = 0; bi < B; ++bi) {
    std::copy_n(a.value().ptr() + bi * CA * HW, CA * HW, out.ptr() + bi * (CA + CB) * HW);
    std::copy_n(b.value().ptr() + bi * CB * HW, CB * HW, out.ptr() + (bi * (CA + CB) + CA) * HW);
  }
  return g.apply(std::move(out), {a, b}, [a, b, B, CA, CB, HW](Node& self) {
    for (std::size_t bi = 0; bi < B; ++bi) {
      const double* gp = self.grad.ptr() + bi * (CA + CB) * HW;
      if (a.requires_grad()) {
        double* ga = a.node()->grad_buffer().ptr() + bi * CA * HW;
        for (std::size_t i = 0; i < CA * HW; ++i) ga[i] += gp[i];
      }
      if (b.requires_grad()) {
        double* gb = b.node()->grad_buffer().ptr() + bi * CB * HW;
        for (std::size_t i = 0; i < CB * HW; ++i) gb[i] += gp[CA * HW + i];
      }
    }
  });
}

Var scale_channels(Graph& g, const Var& x, const Var& gate) {
  require_rank("scale_channels", x, 4, "input");
  require_rank("scale_channels", gate, 2, "gate");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gate.dim(0) != B || gate.dim(1) != C)
    throw ShapeError("scale_channels: gate " + shape_str(gate.shape()) + " does not match input " +
                     shape_str(x.shape()));
  Tensor out(x.shape());
  for (std::size_t p = 0; p < B * C; ++p)
    for (std::size_t i = 0; i < HW; ++i) out[p * HW + i] = x.value()[p * HW + i] * gate.value()[p];
  return g.apply(std::move(out), {x, gate}, [x, gate, B, C, HW](Node& self) {
    for (std::size_t p = 0; p < B * C; ++p) {
      if (x.requires_grad()) {
        auto& gx = x.node()->grad_buffer();
        for (std::size_t i = 0; i < HW; ++i) gx[p * HW + i] += self.grad[p * HW + i] * gate.value()[p];
      }
      if (gate.requires_grad()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < HW; ++i) acc += self.grad[p * HW + i] * x.value()[p * HW + i];
        gate.node()->grad_buffer()[p] += acc;
      }
    }
  });
}

Var scale_spatial(Graph& g, const Var& x, const Var& gate) {
  require_rank("scale_spatial", x, 4, "input");
  require_rank("scale_spatial", gate, 4, "gate");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gate.dim(0) != B || gate.dim(1) != 1 || gate.dim(2) != x.dim(2) || gate.dim(3) != x.dim(3))
    throw ShapeError("scale_spatial: gate " + shape_str(gate.shape()) + " does not match input " +
                     shape_str(x.shape()));
  Tensor out(x.shape());
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i)
        out[(bi * C + c) * HW + i] = x.value()[(bi * C + c) * HW + i] * gate.value()[bi * HW + i];
  return g.apply(std::move(out), {x, gate}, [x, gate, B, C, HW](Node& self) {
    for (std::size_t bi = 0; bi < B; ++bi)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) {
          const std::size_t idx = (bi * C + c) * HW + i;
          if (x.requires_grad()) x.node()->grad_buffer()[idx] += self.grad[idx] * gate.value()[bi * HW + i];
          if (gate.requires_grad())
            gate.node()->grad_buffer()[bi * HW + i] += self.grad[idx] * x.value()[idx];
        }
  });
}

Var conv1d_same(Graph& g, const Var& x, const Var& w, const Var& b) {
  require_rank("conv1d_same", x, 2, "input");
  require_rank("conv1d_same", w, 1, "kernel");
  const std::size_t B = x.dim(0), L = x.dim(1), k = w.dim(0);
  if (k % 2 == 0) throw ShapeError("conv1d_same: kernel length must be odd, got " + std::to_string(k));
  if (b && b.value().size() != 1) throw ShapeError("conv1d_same: bias must have one element");
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  Tensor out({B, L});
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t l = 0; l < L; ++l) {
      double s = b ? b.value()[0] : 0.0;
      for (std::size_t t = 0; t < k; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l) + static_cast<std::ptrdiff_t>(t) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
        s += w.value()[t] * x.value()[bi * L + static_cast<std::size_t>(src)];
      }
      out[bi * L + l] = s;
    }
  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(b);
  return g.apply(std::move(out), std::span<const Var>(inputs), [x, w, b, B, L, k, half](Node& self) {
    for (std::size_t bi = 0; bi < B; ++bi)
      for (std::size_t l = 0; l < L; ++l) {
        const double gv = self.grad[bi * L + l];
        if (b && b.requires_grad()) b.node()->grad_buffer()[0] += gv;
        for (std::size_t t = 0; t < k; ++t) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l) + static_cast<std::ptrdiff_t>(t) - half;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
          const std::size_t si = bi * L + static_cast<std::size_t>(src);
          if (x.requires_grad()) x.node()->grad_buffer()[si] += gv * w.value()[t];
          if (w.requires_grad()) w.node()->grad_buffer()[t] += gv * x.value()[si];
        }
      }
  });
}

Var to_sequence(Graph& g, const Var& x) {
  require_rank("to_sequence", x, 4, "input");
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2) * x.dim(3);
  Tensor out({B, L, C});
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t l = 0; l < L; ++l) out[(bi * L + l) * C + c] = x.value()[(bi * C + c) * L + l];
  return g.apply(std::move(out), {x}, [x, B, C, L](Node& self) {
    auto& gx = x.node()->grad_buffer();
    for (std::size_t bi = 0; bi < B; ++bi)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t l = 0; l < L; ++l) gx[(bi * C + c) * L + l] += self.grad[(bi * L + l) * C + c];
  });
}

Var from_sequence(Graph& g, const Var& s, std::size_t height, std::size_t width) {
  require_rank("from_sequence", s, 3, "sequence");
  const std::size_t B = s.dim(0), L = s.dim(1), C = s.dim(2);
  if (L != height * width)
    throw ShapeError("from_sequence: sequence length " + std::to_string(L) + " != " +
                     std::to_string(height) + "x" + std::to_string(width));
  Tensor out({B, C, height, width});
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t l = 0; l < L; ++l) out[(bi * C + c) * L + l] = s.value()[(bi * L + l) * C + c];
  return g.apply(std::move(out), {s}, [s, B, C, L](Node& self) {
    auto& gs = s.node()->grad_buffer();
    for (std::size_t bi = 0; bi < B; ++bi)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t l = 0; l < L; ++l) gs[(bi * L + l) * C + c] += self.grad[(bi * C + c) * L + l];
  });
}

Var slice_rows(Graph& g, const Var& x, std::size_t begin, std::size_t end) {
  const std::size_t rows = x.dim(0);
  if (begin >= end || end > rows)
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for leading extent " + std::to_string(rows));
  const std::size_t stride = x.value().size() / rows;
  Shape shape = x.shape();
  shape[0] = end - begin;
  Tensor out(shape);
  std::copy_n(x.value().ptr() + begin * stride, (end - begin) * stride, out.ptr());
  return g.apply(std::move(out), {x}, [x, begin, stride](Node& self) {
    double* gx = x.node()->grad_buffer().ptr() + begin * stride;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Var concat_rows(Graph& g, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape shape = parts[0].shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1))
      throw ShapeError("concat_rows: trailing extents differ, " + shape_str(s) + " vs " + shape_str(shape));
    rows += s[0];
  }
  shape[0] = rows;
  Tensor out(shape);
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().ptr(), p.value().size(), out.ptr() + at);
    at += p.value().size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.apply(std::move(out), std::span<const Var>(inputs), [inputs](Node& self) {
    std::size_t at = 0;
    for (const auto& p : inputs) {
      if (p.requires_grad()) {
        auto& gp = p.node()->grad_buffer();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[at + i];
      }
      at += p.value().size();
    }
  });
}

Var column(Graph& g, const Var& x, std::size_t c) {
  require_rank("column", x, 2, "input");
  const std::size_t N = x.dim(0), K = x.dim(1);
  if (c >= K) throw ShapeError("column: index " + std::to_string(c) + " >= " + std::to_string(K));
  Tensor out({N});
  for (std::size_t i = 0; i < N; ++i) out[i] = x.value()[i * K + c];
  return g.apply(std::move(out), {x}, [x, N, K, c](Node& self) {
    auto& gx = x.node()->grad_buffer();
    for (std::size_t i = 0; i < N; ++i) gx[i * K + c] += self.grad[i];
  });
}

Var dropout(Graph& g, const Var& x, double rate, bool train, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ShapeError("dropout: rate must lie in [0,1)");
  if (!train || rate == 0.0) return x;
  const double keep = 1.0 / (1.0 - rate);
  Tensor mask(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() >= rate ? keep : 0.0;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * mask[i];
  return g.apply(std::move(out), {x}, [x, mask = std::move(mask)](Node& self) {
    auto& gx = x.node()->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * mask[i];
  });
}

}  // namespace dsagl::ops
