#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "msfm/numerics/layers.hpp"
#include "msfm/synth/sensors.hpp"
#include "msfm/tokenizers/grouping.hpp"
#include "msfm/tokenizers/pqa.hpp"

namespace msfm::tok {

// Spatial grid of embeddings; row-major positions, data (height*width, dim).
struct TokenGrid {
  std::size_t height = 0, width = 0;
  Var data;

  std::size_t tokens() const { return height * width; }
  std::size_t dim() const { return data.dim(1); }
  // (height, width, dim) view of the same values.
  Var hwc() const { return ops::reshape(data, {height, width, dim()}); }
  static TokenGrid from_hwc(const Var& x) { return {x.dim(0), x.dim(1), ops::reshape(x, {x.dim(0) * x.dim(1), x.dim(2)})}; }
};

struct SpectralConfig {
  std::size_t token_dim = 192;   // D
  std::size_t group_dim = 96;    // d_lambda
  std::size_t layers = 4;
  std::size_t heads = 2;
  std::size_t fusion_dim = 192;  // aggregation width
  std::size_t agg_heads = 2;
  std::size_t mlp_ratio = 4;
};

// Same-grid padding for an odd kernel. Borders are edge-replicated, so a
// constant raster embeds to a constant grid.
inline std::size_t same_pad(std::size_t kernel) { return (kernel - 1) / 2; }

inline void check_raster(const Var& x, const synth::SensorSpec& spec) {
  require(x.rank() == 3 && x.dim(0) == spec.channels && x.dim(1) == x.dim(2),
          spec.id + ": raster " + shape_str(x.shape()) + " does not match " + std::to_string(spec.channels) + " channels");
  require(x.dim(1) % spec.patch_stride == 0,
          spec.id + ": raster side " + std::to_string(x.dim(1)) + " not divisible by stride " + std::to_string(spec.patch_stride));
}

inline constexpr std::size_t kSpectralChunk = 256;

inline void add_spectral_tokenizer(ParamStore& ps, const std::string& name, const synth::SensorSpec& spec, const SpectralConfig& c,
                                   CounterRng& rng) {
  const auto grouping = partition_bands(spec.inventory(), spec.group_count);
  const std::size_t k = spec.patch_kernel;
  for (std::size_t g = 0; g < grouping.size(); ++g) {
    const auto [b, e] = grouping.spans[g];
    nn::add_linear(ps, name + ".g" + std::to_string(g), k * k * (e - b), c.group_dim, rng);
  }
  Tensor pos(Shape{grouping.size(), c.group_dim});
  for (auto& v : pos.storage()) v = rng.normal(0.0, 0.02);
  ps.add(name + ".pos", std::move(pos));
  for (std::size_t l = 0; l < c.layers; ++l) nn::add_transformer_block(ps, name + ".spec" + std::to_string(l), c.group_dim, c.mlp_ratio, rng);
  nn::add_layer_norm(ps, name + ".spec_ln", c.group_dim);
  add_pqa(ps, name + ".agg", {c.group_dim, c.fusion_dim, c.token_dim, 0, c.agg_heads}, rng);
}

// Raster (C, H, W) -> grid (H/stride)^2 x D. Each group's bands over the
// kernel footprint are embedded to d_lambda by its own convolution, the
// spectral position table is added, a transformer runs over the G group
// tokens at every position, and projected-query attention pools them into one
// token.
inline TokenGrid spectral_tokenize(const Binding& p, const std::string& name, const Var& x, const synth::SensorSpec& spec,
                                   const SpectralGrouping& grouping, const SpectralConfig& c) {
  check_raster(x, spec);
  require(grouping.bands() == spec.channels, spec.id + ": grouping covers " + std::to_string(grouping.bands()) + " bands, raster has " +
                                                 std::to_string(spec.channels));
  const std::size_t k = spec.patch_kernel, s = spec.patch_stride;
  const Var hwc = ops::pad_edge_hwc(ops::permute(x, {1, 2, 0}), same_pad(k));
  std::vector<Var> groups;
  std::size_t h = 0, w = 0;
  for (std::size_t g = 0; g < grouping.size(); ++g) {
    const auto [b, e] = grouping.spans[g];
    const std::string gn = name + ".g" + std::to_string(g);
    const Var t = ops::conv2d_hwc(ops::slice(hwc, 2, b, e), p(gn + ".w"), p(gn + ".b"), k, s, 0);
    h = t.dim(0);
    w = t.dim(1);
    groups.push_back(ops::reshape(t, {h * w, 1, c.group_dim}));
  }
  const Var seq = ops::add(ops::concat(groups, 1), p(name + ".pos"));  // (L, G, d_lambda)
  // Positions are independent from here on; running them in chunks keeps the
  // working set in cache without changing any value.
  const std::size_t L = h * w;
  std::vector<Var> out;
  for (std::size_t b = 0; b < L; b += kSpectralChunk) {
    Var t = L <= kSpectralChunk ? seq : ops::slice(seq, 0, b, std::min(L, b + kSpectralChunk));
    for (std::size_t l = 0; l < c.layers; ++l) t = nn::transformer_block(p, name + ".spec" + std::to_string(l), t, c.heads);
    t = nn::layer_norm(p, name + ".spec_ln", t);
    out.push_back(pqa(p, name + ".agg", t, {}, c.agg_heads));
  }
  return {h, w, out.size() == 1 ? out.front() : ops::concat(out, 0)};
}

inline void add_patch_embed(ParamStore& ps, const std::string& name, const synth::SensorSpec& spec, std::size_t dim, CounterRng& rng) {
  nn::add_linear(ps, name, spec.patch_kernel * spec.patch_kernel * spec.channels, dim, rng);
}

// Raster (C, H, W) -> grid via a k x k convolution with stride s over the
// edge-padded raster.
inline TokenGrid patch_embed(const Binding& p, const std::string& name, const Var& x, const synth::SensorSpec& spec) {
  check_raster(x, spec);
  const std::size_t k = spec.patch_kernel;
  const Var padded = ops::pad_edge_hwc(ops::permute(x, {1, 2, 0}), same_pad(k));
  return TokenGrid::from_hwc(ops::conv2d_hwc(padded, p(name + ".w"), p(name + ".b"), k, spec.patch_stride, 0));
}

}  // namespace msfm::tok
