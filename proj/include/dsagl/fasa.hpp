// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

#include "dsagl/autograd.hpp"
#include "dsagl/nn.hpp"
#include "dsagl/rng.hpp"

namespace dsagl {

struct FasaConfig {
  std::size_t channels = 8;        // width of every multi-scale branch
  std::size_t reduction = 2;       // channel-gate bottleneck
  std::size_t spatial_kernel = 7;
  std::size_t attention_hidden = 16;

  void validate() const;
};

struct AttentionResult {
  Tensor weights;     // [N], softmax over the bag
  double bag_logit = 0.0;
  Tensor embeddings;  // [N, channels]
};

/// Multi-scale fusion, parallel channel/spatial gating and gated attention
/// pooling over the instances of one bag.
class Fasa {
 public:
  static constexpr std::size_t kMinSide = 7;

  Fasa(const FasaConfig& cfg, std::size_t input_dim, nn::ParamStore& store, Rng& init_rng,
       const std::string& prefix = "fasa.");

  const FasaConfig& config() const noexcept { return cfg_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  /// Side of the square map an instance vector is laid out on.
  std::size_t map_side() const noexcept { return side_; }

  /// x[N,d] -> [N,1,s,s], zero-padded row-major.
  Var to_maps(Graph& g, const Var& x) const;
  /// Sum of the 3x3, 5x5 and 7x7 same-padded branches.
  Var multiscale_fuse(Graph& g, const Var& maps) const;
  /// h * channel_gate(h) + h * spatial_gate(h).
  Var dual_attention(Graph& g, const Var& h) const;
  /// Instance embeddings e[N, channels] from encoder features x[N,d].
  Var embed(Graph& g, const Var& x) const;

  struct Pooled {
    Var weights;  // [N]
    Var logit;    // [1]
  };
  /// Attention pooling of one bag's embeddings.
  Pooled attention_pool(Graph& g, const Var& e) const;
  Pooled forward(Graph& g, const Var& x) const;

  AttentionResult forward(const Tensor& x) const;

  struct Conv {
    Var w, b;
  };
  Conv branch[3];  // kernels 3, 5, 7
  Conv channel1, channel2;
  Conv spatial;
  Conv attn_v, attn_u;  // [hidden, channels]
  Conv attn_w;         // [1, hidden]
  Conv classifier;     // [1, channels]

 private:
  FasaConfig cfg_;
  std::size_t input_dim_;
  std::size_t side_;
};

}  // namespace dsagl
