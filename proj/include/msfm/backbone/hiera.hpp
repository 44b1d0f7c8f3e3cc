#pragma once

#include <cstddef>
#include <string>

#include "msfm/numerics/layers.hpp"

// Hiera-style stage blocks over token grids held as (H, W, C) tensors.
namespace msfm::hiera {

// (H, W, C) -> (H/w * W/w, w*w, C), windows in row-major order.
inline Var to_windows(const Var& x, std::size_t w) {
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  require(w > 0 && H % w == 0 && W % w == 0, "window " + std::to_string(w) + " does not tile grid " + shape_str(x.shape()));
  if (w == H && w == W) return ops::reshape(x, {1, H * W, C});
  const Var t = ops::permute(ops::reshape(x, {H / w, w, W / w, w, C}), {0, 2, 1, 3, 4});
  return ops::reshape(t, {(H / w) * (W / w), w * w, C});
}

inline Var from_windows(const Var& x, std::size_t H, std::size_t W, std::size_t w) {
  const std::size_t C = x.dim(2);
  if (w == H && w == W) return ops::reshape(x, {H, W, C});
  const Var t = ops::permute(ops::reshape(x, {H / w, W / w, w, w, C}), {0, 2, 1, 3, 4});
  return ops::reshape(t, {H, W, C});
}

// Window side for a grid; 0 means global attention.
inline std::size_t window_side(std::size_t window, std::size_t grid) { return window == 0 ? grid : window; }

// Runs `count` pre-norm blocks `<name><first>`.. with attention restricted to
// non-overlapping windows of side w. Everything but attention is per token, so
// the grid stays in window layout for the whole run.
inline Var windowed_blocks(const Binding& p, const std::string& name, std::size_t first, std::size_t count, const Var& x,
                           std::size_t w, std::size_t heads) {
  if (count == 0) return x;
  const std::size_t H = x.dim(0), W = x.dim(1);
  Var t = to_windows(x, w);
  for (std::size_t i = first; i < first + count; ++i) t = nn::transformer_block(p, name + std::to_string(i), t, heads);
  return from_windows(t, H, W, w);
}

// Query-pooling transition from width c_in to c_out:
//   qkv  = QKV(LN x)            at the input resolution
//   q    = maxpool2x2(q)        inside each key window
//   x'   = maxpool2x2(R (LN x)) + Proj(Attn(q, k, v))
//   out  = x' + MLP(LN x')
// Keys and values cover windows of side 2 w_out of the input grid, so every
// pooled query sees exactly the tokens it was pooled from plus its window
// neighbours.
inline void add_pool_block(ParamStore& ps, const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t mlp_ratio,
                           CounterRng& rng) {
  nn::add_layer_norm(ps, name + ".ln1", c_in);
  nn::add_qkv(ps, name + ".qkv", c_in, c_out, rng);
  nn::add_linear(ps, name + ".proj", c_out, c_out, rng);
  nn::add_linear(ps, name + ".res", c_in, c_out, rng);
  nn::add_layer_norm(ps, name + ".ln2", c_out);
  nn::add_mlp(ps, name + ".mlp", c_out, mlp_ratio * c_out, rng);
}

// x (H, W, c_in) -> (H/2, W/2, c_out); w_out is the window side on the output
// grid (0 = global).
inline Var pool_block(const Binding& p, const std::string& name, const Var& x, std::size_t w_out, std::size_t heads) {
  const std::size_t H = x.dim(0), W = x.dim(1);
  require(H % 2 == 0 && W % 2 == 0, name + ": query pooling needs an even grid, got " + shape_str(x.shape()));
  const std::size_t Ho = H / 2, Wo = W / 2;
  const std::size_t wo = w_out == 0 ? Ho : w_out, wi = 2 * wo;
  require(Ho % wo == 0 && Wo % wo == 0 && (w_out != 0 || Ho == Wo), name + ": window does not tile the pooled grid");
  const Var xn = nn::layer_norm(p, name + ".ln1", x);
  const auto [q, k, v] = nn::qkv(p, name + ".qkv", to_windows(xn, wi));
  const std::size_t nw = q.dim(0), c = q.dim(2);
  const Var qp = ops::reshape(ops::max_pool2x2(ops::reshape(q, {nw, wi, wi, c})), {nw, wo * wo, c});
  const Var a = nn::linear(p, name + ".proj", nn::attention(qp, k, v, heads));
  const Var h = ops::add(ops::max_pool2x2(nn::linear(p, name + ".res", xn)), from_windows(a, Ho, Wo, wo));
  return ops::add(h, nn::mlp(p, name + ".mlp", nn::layer_norm(p, name + ".ln2", h)));
}

}  // namespace msfm::hiera
