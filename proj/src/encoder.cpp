// SPDX-License-Identifier: Apache-2.0
#include "dsagl/encoder.hpp"

#include <cmath>
#include <string>

#include "dsagl/error.hpp"
#include "dsagl/ops.hpp"

namespace dsagl {

namespace {

constexpr std::size_t kStemKernel = 3;

std::size_t pow2(std::size_t n) { return std::size_t{1} << n; }

void require_finite(const Var& v, const char* path) {
  if (!v.value().all_finite())
    throw NumericError(std::string("encode: non-finite values on the ") + path + " path");
}

}  // namespace

void EncoderConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("encoder config: " + m); };
  if (in_channels == 0) fail("in_channels must be >= 1");
  if (stem_channels == 0) fail("stem_channels must be >= 1");
  if (stem_layers == 0) fail("stem_layers must be >= 1");
  if (mamba_depth > 6) fail("mamba_depth must be <= 6");
  if (state_dim == 0) fail("state_dim must be >= 1");
  if (feature_dim == 0) fail("feature_dim must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0,1)");
  if (eca_kernel % 2 == 0) fail("eca_kernel must be odd");
  if (spatial_kernel % 2 == 0) fail("spatial_kernel must be odd");
  if (se_reduction == 0 || se_reduction > stem_channels) fail("se_reduction must be in [1, stem_channels]");
}

std::size_t EncoderConfig::output_side(std::size_t side) const {
  for (std::size_t i = 0; i < mamba_depth; ++i) side = (side + 1) / 2;
  return side;
}

Encoder::Encoder(const EncoderConfig& cfg, nn::ParamStore& store, Rng& rng, const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t C = cfg_.stem_channels, Ci = cfg_.in_channels, N = cfg_.state_dim;
  const std::size_t k = kStemKernel;

  for (std::size_t i = 0; i < cfg_.stem_layers; ++i) {
    const std::size_t cin = i == 0 ? Ci : C;
    const std::string p = prefix + "stem." + std::to_string(i) + ".";
    stem_blocks.push_back({store.weight(p + "w", {C, cin, k, k}, cin * k * k, rng), store.zeros(p + "b", {C})});
  }

  for (std::size_t i = 0; i < cfg_.mamba_depth; ++i) {
    const std::string p = prefix + "mamba." + std::to_string(i) + ".";
    MambaLayer L;
    L.scan.w_delta = store.weight(p + "scan.w_delta", {C, C}, C, rng);
    L.scan.b_delta = store.zeros(p + "scan.b_delta", {C});
    L.scan.w_b = store.weight(p + "scan.w_b", {N, C}, C, rng);
    L.scan.b_b = store.zeros(p + "scan.b_b", {N});
    L.scan.w_c = store.weight(p + "scan.w_c", {N, C}, C, rng);
    L.scan.b_c = store.zeros(p + "scan.b_c", {N});
    Tensor a_log({C, N});
    for (auto& v : a_log.data()) v = std::log(rng.uniform(0.1, 1.0));
    L.scan.a_log = store.add(p + "scan.a_log", std::move(a_log));
    L.eca = {store.weight(p + "eca.w", {cfg_.eca_kernel}, cfg_.eca_kernel, rng), store.zeros(p + "eca.b", {1})};
    L.down = {store.weight(p + "down.w", {C, C, 3, 3}, C * 9, rng), store.zeros(p + "down.b", {C})};
    layers.push_back(std::move(L));
  }

  const std::size_t hidden = C / cfg_.se_reduction;
  const std::size_t ks = cfg_.spatial_kernel;
  const std::size_t f = pow2(cfg_.mamba_depth);
  local.se1 = {store.weight(prefix + "skip1.se1.w", {hidden, C}, C, rng), store.zeros(prefix + "skip1.se1.b", {hidden})};
  local.se2 = {store.weight(prefix + "skip1.se2.w", {C, hidden}, hidden, rng), store.zeros(prefix + "skip1.se2.b", {C})};
  local.spatial = {store.weight(prefix + "skip1.spatial.w", {1, 2, ks, ks}, 2 * ks * ks, rng),
                   store.zeros(prefix + "skip1.spatial.b", {1})};
  local.down = {store.weight(prefix + "skip1.down.w", {C, C, f, f}, C * f * f, rng),
                store.zeros(prefix + "skip1.down.b", {C})};
  global = {store.weight(prefix + "skip2.w", {C, Ci, f, f}, Ci * f * f, rng), store.zeros(prefix + "skip2.b", {C})};
  proj = {store.weight(prefix + "proj.w", {cfg_.feature_dim, C}, C, rng), store.zeros(prefix + "proj.b", {cfg_.feature_dim})};
}

std::size_t Encoder::parameter_count(const EncoderConfig& cfg) {
  nn::ParamStore store;
  Rng rng(0);
  Encoder e(cfg, store, rng);
  return store.numel();
}

Var Encoder::drop(Graph& g, const Var& x, const EncodeOptions& opt) const {
  if (!opt.train || cfg_.dropout == 0.0) return x;
  if (!opt.rng) throw ShapeError("encode: train mode requires a dropout rng");
  return ops::dropout(g, x, cfg_.dropout, true, *opt.rng);
}

Var Encoder::stem(Graph& g, const Var& p) const {
  if (p.value().rank() != 4) throw ShapeError("stem: input must be [B,C,H,W], got " + shape_str(p.shape()));
  if (p.dim(1) != cfg_.in_channels)
    throw ShapeError("stem: input channel dimension is " + std::to_string(p.dim(1)) + ", expected " +
                     std::to_string(cfg_.in_channels));
  if (p.dim(2) < kStemKernel || p.dim(3) < kStemKernel)
    throw ShapeError("stem: spatial extent " + std::to_string(p.dim(2)) + "x" + std::to_string(p.dim(3)) +
                     " is smaller than the 3x3 stem kernel");
  Var h = p;
  for (const auto& blk : stem_blocks) h = ops::relu(g, ops::conv2d(g, h, blk.w, blk.b, 1, 1));
  return h;
}

Var Encoder::mamba_layer(Graph& g, const Var& f, std::size_t i, const EncodeOptions& opt) const {
  if (i >= layers.size())
    throw ShapeError("mamba_layer: index " + std::to_string(i) + " out of range for depth " +
                     std::to_string(layers.size()));
  const MambaLayer& L = layers[i];
  const std::size_t H = f.dim(2), W = f.dim(3);
  Var seq = ops::to_sequence(g, f);
  Var m = ops::from_sequence(g, ssm::selective_scan(g, seq, L.scan), H, W);
  m = drop(g, m, opt);
  Var gate = ops::sigmoid(g, ops::conv1d_same(g, ops::global_avg_pool(g, m), L.eca.w, L.eca.b));
  Var e = ops::scale_channels(g, m, gate);
  e = ops::pad_to_multiple(g, e, 2);
  return ops::conv2d(g, e, L.down.w, L.down.b, 2, 1);
}

Var Encoder::skip_local(Graph& g, const Var& f0, const EncodeOptions& opt) const {
  Var d = ops::global_avg_pool(g, f0);
  d = ops::relu(g, ops::linear(g, d, local.se1.w, local.se1.b));
  Var cg = ops::sigmoid(g, ops::linear(g, d, local.se2.w, local.se2.b));
  Var h = ops::scale_channels(g, f0, cg);
  Var pooled = ops::concat_channels(g, ops::channel_max(g, h), ops::channel_mean(g, h));
  Var sg = ops::sigmoid(g, ops::conv2d(g, pooled, local.spatial.w, local.spatial.b, 1, cfg_.spatial_kernel / 2));
  h = ops::scale_spatial(g, h, sg);
  const std::size_t fct = pow2(cfg_.mamba_depth);
  h = ops::pad_to_multiple(g, h, fct);
  return drop(g, ops::conv2d(g, h, local.down.w, local.down.b, fct, 0), opt);
}

Var Encoder::skip_global(Graph& g, const Var& p, const EncodeOptions& opt) const {
  const std::size_t fct = pow2(cfg_.mamba_depth);
  Var h = ops::pad_to_multiple(g, p, fct);
  return drop(g, ops::conv2d(g, h, global.w, global.b, fct, 0), opt);
}

Var Encoder::encode(Graph& g, const Var& p, const EncodeOptions& opt) const {
  Var f0 = stem(g, p);
  Var main = f0;
  for (std::size_t i = 0; i < layers.size(); ++i) main = mamba_layer(g, main, i, opt);
  Var s1 = skip_local(g, f0, opt);
  Var s2 = skip_global(g, p, opt);
  require_finite(main, "main");
  require_finite(s1, "skip1");
  require_finite(s2, "skip2");
  if (main.shape() != s1.shape() || main.shape() != s2.shape())
    throw ShapeError("encode: path shapes disagree: main " + shape_str(main.shape()) + ", skip1 " +
                     shape_str(s1.shape()) + ", skip2 " + shape_str(s2.shape()));
  if (opt.trace) *opt.trace = EncoderTrace{f0.value(), main.value(), s1.value(), s2.value()};

  Var sum;
  auto accumulate = [&](bool on, const Var& v) {
    if (!on) return;
    sum = sum ? ops::add(g, sum, v) : v;
  };
  accumulate(opt.use_main, main);
  accumulate(opt.use_skip1, s1);
  accumulate(opt.use_skip2, s2);
  if (!sum) sum = constant(Tensor(main.shape(), 0.0));
  return ops::linear(g, ops::global_avg_pool(g, sum), proj.w, proj.b);
}

Tensor Encoder::encode(const Tensor& p) const {
  Graph g(false);
  return encode(g, constant(p)).value();
}

}  // namespace dsagl
