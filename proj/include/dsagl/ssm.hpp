// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "dsagl/autograd.hpp"
#include "dsagl/tensor.hpp"

namespace dsagl::ssm {

/// Continuous single-input single-output system dh/dt = A h + B x, y = C h.
struct SSMParams {
  Tensor A;  // [N,N]
  Tensor B;  // [N,1]
  Tensor C;  // [1,N]
  double delta = 1.0;

  std::size_t state_dim() const { return A.dim(0); }
  /// Throws ShapeError on inconsistent extents, non-finite entries or delta <= 0.
  void validate() const;
};

struct SSMDiscrete {
  Tensor A_bar;  // [N,N]
  Tensor B_bar;  // [N,1]
  Tensor C;      // [1,N]
};

struct SSMKernel {
  Tensor taps;  // [L]
  std::size_t length() const { return taps.size(); }
};

/// ||delta*A|| below this uses the power series for B_bar.
inline constexpr double kSeriesThreshold = 0.5;
inline constexpr int kSeriesTerms = 12;

enum class ZohBranch { automatic, series, direct };

/// Zero-order hold: A_bar = exp(dA), B_bar = (dA)^-1 (exp(dA) - I) dB.
SSMDiscrete discretize_zoh(const SSMParams& params, ZohBranch branch = ZohBranch::automatic);

/// Scaling-and-squaring Taylor exponential of a square matrix.
Tensor matrix_exp(const Tensor& m);

/// (e^z - 1)/z with its removable singularity filled in, and its derivative.
double phi1(double z);
double phi1_derivative(double z);

// The three evaluation forms. The Var overloads are differentiable in every
// argument; the Tensor overloads evaluate the same graph on constants.
Var ssm_recurrence(Graph& g, const Var& A_bar, const Var& B_bar, const Var& C, const Var& x);
Var ssm_kernel(Graph& g, const Var& A_bar, const Var& B_bar, const Var& C, std::size_t length);
/// Causal convolution y_t = sum_{i<=t} k_i x_{t-i}; k and x of equal length.
Var ssm_conv_apply(Graph& g, const Var& kernel, const Var& x);

Tensor ssm_recurrence(const SSMDiscrete& d, const Tensor& x);
SSMKernel ssm_kernel(const SSMDiscrete& d, std::size_t length);
Tensor ssm_conv_apply(const SSMKernel& k, const Tensor& x);

/// Learned input-dependent projections for a D-channel scan with state N.
/// Channel d uses the diagonal transition A[d,:] = -exp(a_log[d,:]).
struct SelectiveProjections {
  Var w_delta;  // [D,D]
  Var b_delta;  // [D]
  Var w_b;      // [N,D]
  Var b_b;      // [N]
  Var w_c;      // [N,D]
  Var b_c;      // [N]
  Var a_log;    // [D,N]

  std::size_t channels() const { return w_delta.dim(0); }
  std::size_t state_dim() const { return w_b.dim(0); }
};

/// Fused time-varying scan over diagonal systems, differentiable in all inputs.
/// u, delta: [B,L,D]; A: [D,N] (negative entries); b, c: [B,L,N]. Returns [B,L,D]:
///   h_t[d,n] = exp(delta_t[d] A[d,n]) h_{t-1}[d,n] + delta_t[d] phi1(delta_t[d] A[d,n]) b_t[n] u_t[d]
///   y_t[d]   = sum_n c_t[n] h_t[d,n]
Var selective_scan_core(Graph& g, const Var& u, const Var& delta, const Var& A, const Var& b,
                        const Var& c);

/// Projects x ([B,L,D] or [L,D]) to (delta, B, C) with softplus on delta and runs the scan.
Var selective_scan(Graph& g, const Var& x, const SelectiveProjections& p);
Tensor selective_scan(const Tensor& x, const SelectiveProjections& p);

}  // namespace dsagl::ssm
