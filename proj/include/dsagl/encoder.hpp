// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dsagl/autograd.hpp"
#include "dsagl/nn.hpp"
#include "dsagl/rng.hpp"
#include "dsagl/ssm.hpp"

namespace dsagl {

struct EncoderConfig {
  std::size_t in_channels = 1;
  std::size_t stem_channels = 8;
  std::size_t stem_layers = 2;   // 3x3 stride-1 conv + ReLU blocks
  std::size_t mamba_depth = 1;   // n; 0 bypasses the Mamba stack
  std::size_t state_dim = 4;     // N of every selective scan
  std::size_t feature_dim = 64;  // d
  double dropout = 0.1;
  std::size_t eca_kernel = 3;
  std::size_t se_reduction = 2;
  std::size_t spatial_kernel = 7;

  void validate() const;
  /// Spatial extent of every path output for an input of side `side`.
  std::size_t output_side(std::size_t side) const;
};

/// Intermediate maps of one forward pass, for inspection.
struct EncoderTrace {
  Tensor f0, main, skip1, skip2;
};

struct EncodeOptions {
  bool train = false;
  Rng* rng = nullptr;  // dropout masks; required when train is set
  bool use_main = true;
  bool use_skip1 = true;
  bool use_skip2 = true;
  EncoderTrace* trace = nullptr;
};

/// Stem, Mamba stack, local and global skip paths, pooled projection to d.
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, nn::ParamStore& store, Rng& init_rng,
          const std::string& prefix = "encoder.");

  const EncoderConfig& config() const noexcept { return cfg_; }

  Var stem(Graph& g, const Var& p) const;
  Var mamba_layer(Graph& g, const Var& f, std::size_t i, const EncodeOptions& opt) const;
  Var skip_local(Graph& g, const Var& f0, const EncodeOptions& opt) const;
  Var skip_global(Graph& g, const Var& p, const EncodeOptions& opt) const;
  /// p[B,C,H,W] -> x[B,d].
  Var encode(Graph& g, const Var& p, const EncodeOptions& opt = {}) const;
  Tensor encode(const Tensor& p) const;

  /// Parameter count of an encoder built from `cfg`.
  static std::size_t parameter_count(const EncoderConfig& cfg);

  struct Conv {
    Var w, b;
  };
  struct MambaLayer {
    ssm::SelectiveProjections scan;
    Conv eca;  // w[k], b[1]
    Conv down;
  };
  struct LocalSkip {
    Conv se1, se2;  // fully connected squeeze/excite
    Conv spatial;   // [1,2,k,k]
    Conv down;
  };

  // Direct handles, shared with the parameter store.
  std::vector<Conv> stem_blocks;
  std::vector<MambaLayer> layers;
  LocalSkip local;
  Conv global;
  Conv proj;

 private:
  Var drop(Graph& g, const Var& x, const EncodeOptions& opt) const;

  EncoderConfig cfg_;
};

}  // namespace dsagl
