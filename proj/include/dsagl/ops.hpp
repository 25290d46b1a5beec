// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

#include "dsagl/autograd.hpp"
#include "dsagl/rng.hpp"

// Differentiable operations. Every op records its backward rule on the
// graph when any input requires a gradient. Shapes are validated up front
// and violations raise ShapeError naming the offending dimension.
namespace dsagl::ops {

inline constexpr double kDefaultLogEps = 1e-8;

// Elementwise, identical shapes.
Var add(Graph& g, const Var& a, const Var& b);
Var sub(Graph& g, const Var& a, const Var& b);
Var mul(Graph& g, const Var& a, const Var& b);
Var scale(Graph& g, const Var& a, double s);
Var add_scalar(Graph& g, const Var& a, double c);

Var relu(Graph& g, const Var& a);
Var sigmoid(Graph& g, const Var& a);
Var tanh(Graph& g, const Var& a);
Var softplus(Graph& g, const Var& a);
Var exp(Graph& g, const Var& a);
/// log(a + eps).
Var log_eps(Graph& g, const Var& a, double eps = kDefaultLogEps);

// Reductions to a one-element tensor.
Var sum(Graph& g, const Var& a);
Var mean(Graph& g, const Var& a);
Var max_all(Graph& g, const Var& a);

Var reshape(Graph& g, const Var& a, Shape shape);

/// Max-subtracted softmax along `axis`.
Var softmax(Graph& g, const Var& a, std::size_t axis);
Var log_softmax(Graph& g, const Var& a, std::size_t axis);

/// [M,K] x [K,N] -> [M,N].
Var matmul(Graph& g, const Var& a, const Var& b);
/// x[M,K] * w[N,K]^T + b[N]; `b` may be null.
Var linear(Graph& g, const Var& x, const Var& w, const Var& b);

/// Cross-correlation: x[B,C,H,W], w[O,C,k,k], optional bias[O].
Var conv2d(Graph& g, const Var& x, const Var& w, const Var& b, std::size_t stride,
           std::size_t padding);
/// Zero-pads the bottom and right edges up to a multiple of m.
Var pad_to_multiple(Graph& g, const Var& x, std::size_t m);

// Spatial pooling of [B,C,H,W].
Var global_avg_pool(Graph& g, const Var& x);  // -> [B,C]
Var global_max_pool(Graph& g, const Var& x);  // -> [B,C]
Var channel_mean(Graph& g, const Var& x);     // -> [B,1,H,W]
Var channel_max(Graph& g, const Var& x);      // -> [B,1,H,W]
Var concat_channels(Graph& g, const Var& a, const Var& b);

/// x[B,C,H,W] * gate[B,C] broadcast over space.
Var scale_channels(Graph& g, const Var& x, const Var& gate);
/// x[B,C,H,W] * gate[B,1,H,W] broadcast over channels.
Var scale_spatial(Graph& g, const Var& x, const Var& gate);

/// 'Same'-padded 1-D convolution along the last axis of x[B,L]; w[k] odd, b[1].
Var conv1d_same(Graph& g, const Var& x, const Var& w, const Var& b);

/// [B,C,H,W] -> [B,H*W,C] raster order, and back.
Var to_sequence(Graph& g, const Var& x);
Var from_sequence(Graph& g, const Var& s, std::size_t height, std::size_t width);

/// Rows [begin, end) of the leading axis.
Var slice_rows(Graph& g, const Var& x, std::size_t begin, std::size_t end);
/// Concatenation along the leading axis; trailing extents must agree.
Var concat_rows(Graph& g, std::span<const Var> parts);
/// Column c of x[N,K] -> [N].
Var column(Graph& g, const Var& x, std::size_t c);

/// Inverted dropout. In train mode a mask is drawn from `rng` and stored on
/// the tape; survivors are scaled by 1/(1-rate). Eval mode is the identity.
Var dropout(Graph& g, const Var& x, double rate, bool train, Rng& rng);

}  // namespace dsagl::ops
