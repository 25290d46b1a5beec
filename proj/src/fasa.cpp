// SPDX-License-Identifier: Apache-2.0
#include "dsagl/fasa.hpp"

#include <cmath>
#include <string>

#include "dsagl/error.hpp"
#include "dsagl/ops.hpp"

namespace dsagl {

namespace {

constexpr std::size_t kBranchKernels[3] = {3, 5, 7};

std::size_t ceil_sqrt(std::size_t d) {
  std::size_t s = static_cast<std::size_t>(std::sqrt(static_cast<double>(d)));
  while (s * s < d) ++s;
  while (s > 0 && (s - 1) * (s - 1) >= d) --s;
  return s;
}

}  // namespace

void FasaConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("fasa config: " + m); };
  if (channels == 0) fail("channels must be >= 1");
  if (reduction == 0 || reduction > channels) fail("reduction must be in [1, channels]");
  if (spatial_kernel % 2 == 0) fail("spatial_kernel must be odd");
  if (attention_hidden == 0) fail("attention_hidden must be >= 1");
}

Fasa::Fasa(const FasaConfig& cfg, std::size_t input_dim, nn::ParamStore& store, Rng& rng,
           const std::string& prefix)
    : cfg_(cfg), input_dim_(input_dim), side_(ceil_sqrt(input_dim)) {
  cfg_.validate();
  if (side_ < kMinSide)
    throw ConfigError("fasa: feature_dim " + std::to_string(input_dim) + " gives a " + std::to_string(side_) +
                      "x" + std::to_string(side_) + " map; the 7x7 branch needs side >= 7 (feature_dim >= 37)");
  const std::size_t C = cfg_.channels, hidden = C / cfg_.reduction, H = cfg_.attention_hidden;
  for (int i = 0; i < 3; ++i) {
    const std::size_t k = kBranchKernels[i];
    const std::string p = prefix + "branch" + std::to_string(k) + ".";
    branch[i] = {store.weight(p + "w", {C, 1, k, k}, k * k, rng), store.zeros(p + "b", {C})};
  }
  channel1 = {store.weight(prefix + "channel1.w", {hidden, C}, C, rng), store.zeros(prefix + "channel1.b", {hidden})};
  channel2 = {store.weight(prefix + "channel2.w", {C, hidden}, hidden, rng), store.zeros(prefix + "channel2.b", {C})};
  const std::size_t ks = cfg_.spatial_kernel;
  spatial = {store.weight(prefix + "spatial.w", {1, 2, ks, ks}, 2 * ks * ks, rng), store.zeros(prefix + "spatial.b", {1})};
  attn_v = {store.weight(prefix + "attn_v.w", {H, C}, C, rng), store.zeros(prefix + "attn_v.b", {H})};
  attn_u = {store.weight(prefix + "attn_u.w", {H, C}, C, rng), store.zeros(prefix + "attn_u.b", {H})};
  attn_w = {store.weight(prefix + "attn_w.w", {1, H}, H, rng), store.zeros(prefix + "attn_w.b", {1})};
  classifier = {store.weight(prefix + "classifier.w", {1, C}, C, rng), store.zeros(prefix + "classifier.b", {1})};
}

Var Fasa::to_maps(Graph& g, const Var& x) const {
  if (x.value().rank() != 2 || x.dim(1) != input_dim_)
    throw ShapeError("fasa: instance features must be [N," + std::to_string(input_dim_) + "], got " +
                     shape_str(x.shape()));
  const std::size_t N = x.dim(0), d = input_dim_, s2 = side_ * side_;
  Tensor out({N, 1, side_, side_}, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t j = 0; j < d; ++j) out[n * s2 + j] = x.value()[n * d + j];
  return g.apply(std::move(out), {x}, [x, N, d, s2](Node& self) {
    Tensor& gx = x.node()->grad_buffer();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < d; ++j) gx[n * d + j] += self.grad[n * s2 + j];
  });
}

Var Fasa::multiscale_fuse(Graph& g, const Var& maps) const {
  if (maps.value().rank() != 4 || maps.dim(2) < kMinSide || maps.dim(3) < kMinSide)
    throw ShapeError("multiscale_fuse: spatial extent must be >= 7, got " + shape_str(maps.shape()));
  Var h;
  for (int i = 0; i < 3; ++i) {
    const std::size_t k = kBranchKernels[i];
    Var y = ops::conv2d(g, maps, branch[i].w, branch[i].b, 1, k / 2);
    h = h ? ops::add(g, h, y) : y;
  }
  return h;
}

Var Fasa::dual_attention(Graph& g, const Var& h) const {
  Var d = ops::relu(g, ops::linear(g, ops::global_avg_pool(g, h), channel1.w, channel1.b));
  Var cg = ops::sigmoid(g, ops::linear(g, d, channel2.w, channel2.b));
  Var pooled = ops::concat_channels(g, ops::channel_max(g, h), ops::channel_mean(g, h));
  Var sg = ops::sigmoid(g, ops::conv2d(g, pooled, spatial.w, spatial.b, 1, cfg_.spatial_kernel / 2));
  return ops::add(g, ops::scale_channels(g, h, cg), ops::scale_spatial(g, h, sg));
}

Var Fasa::embed(Graph& g, const Var& x) const {
  return ops::global_avg_pool(g, dual_attention(g, multiscale_fuse(g, to_maps(g, x))));
}

Fasa::Pooled Fasa::attention_pool(Graph& g, const Var& e) const {
  if (e.value().rank() != 2 || e.dim(1) != cfg_.channels)
    throw ShapeError("attention_pool: embeddings must be [N," + std::to_string(cfg_.channels) + "], got " +
                     shape_str(e.shape()));
  const std::size_t N = e.dim(0);
  Var gated = ops::mul(g, ops::tanh(g, ops::linear(g, e, attn_v.w, attn_v.b)),
                       ops::sigmoid(g, ops::linear(g, e, attn_u.w, attn_u.b)));
  Var scores = ops::reshape(g, ops::linear(g, gated, attn_w.w, attn_w.b), {N});
  Var a = ops::softmax(g, scores, 0);
  Var pooled = ops::matmul(g, ops::reshape(g, a, {1, N}), e);
  Var logit = ops::reshape(g, ops::linear(g, pooled, classifier.w, classifier.b), {1});
  return {a, logit};
}

Fasa::Pooled Fasa::forward(Graph& g, const Var& x) const {
  if (x.value().rank() == 2 && x.dim(0) == 0) throw ShapeError("attention_pool: empty bag");
  return attention_pool(g, embed(g, x));
}

AttentionResult Fasa::forward(const Tensor& x) const {
  Graph g(false);
  Var e = embed(g, constant(x));
  Pooled p = attention_pool(g, e);
  return {p.weights.value(), p.logit.value().item(), e.value()};
}

}  // namespace dsagl
