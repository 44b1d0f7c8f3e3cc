#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "msfm/numerics/ops.hpp"
#include "msfm/numerics/params.hpp"
#include "msfm/numerics/rng.hpp"

// Parameter registration and forward helpers for the composite layers shared
// by the tokenizers, backbone, projector and heads. A layer is a name prefix in
// a ParamStore; `<name>.w` is stored (in, out) so that ops::linear applies it
// directly.
namespace msfm::nn {

inline constexpr double kInitSigma = 0.02;

inline Tensor trunc_normal(Shape shape, CounterRng& rng, double sigma = kInitSigma) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = rng.trunc_normal(sigma);
  return t;
}

// Ones on the leading diagonal of an (in, out) matrix.
inline Tensor eye(std::size_t in, std::size_t out) {
  Tensor t(Shape{in, out});
  for (std::size_t i = 0; i < std::min(in, out); ++i) t.at(i, i) = 1.0;
  return t;
}

inline void add_linear(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, CounterRng& rng, bool bias = true) {
  ps.add(name + ".w", trunc_normal({in, out}, rng));
  if (bias) ps.add(name + ".b", Tensor(Shape{out}));
}

inline Var linear(const Binding& p, const std::string& name, const Var& x) {
  const std::string b = name + ".b";
  return p.store().contains(b) ? ops::linear(x, p(name + ".w"), p(b)) : ops::linear(x, p(name + ".w"));
}

inline void add_layer_norm(ParamStore& ps, const std::string& name, std::size_t d) {
  ps.add(name + ".g", Tensor(Shape{d}, 1.0));
  ps.add(name + ".b", Tensor(Shape{d}));
}

inline Var layer_norm(const Binding& p, const std::string& name, const Var& x) {
  return ops::layer_norm(x, p(name + ".g"), p(name + ".b"));
}

// (B, N, h*dh) -> (B*h, N, dh)
inline Var split_heads(const Var& x, std::size_t heads) {
  const std::size_t B = x.dim(0), N = x.dim(1), d = x.dim(2);
  require(d % heads == 0, "attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dh = d / heads;
  return ops::reshape(ops::permute(ops::reshape(x, {B, N, heads, dh}), {0, 2, 1, 3}), {B * heads, N, dh});
}

// (B*h, N, dh) -> (B, N, h*dh)
inline Var merge_heads(const Var& x, std::size_t heads) {
  const std::size_t B = x.dim(0) / heads, N = x.dim(1), dh = x.dim(2);
  return ops::reshape(ops::permute(ops::reshape(x, {B, heads, N, dh}), {0, 2, 1, 3}), {B, N, heads * dh});
}

// Scaled dot-product attention, q (B, Nq, d), k and v (B, Nk, d).
inline Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads) {
  require(q.rank() == 3 && k.rank() == 3 && v.rank() == 3 && q.dim(0) == k.dim(0) && k.shape() == v.shape() && q.dim(2) == k.dim(2),
          "attention: incompatible q/k/v shapes " + shape_str(q.shape()) + " " + shape_str(k.shape()) + " " + shape_str(v.shape()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(2) / heads));
  const Var s = ops::scale(ops::bmm(split_heads(q, heads), split_heads(k, heads), true), scale);
  return merge_heads(ops::bmm(ops::softmax_last(s), split_heads(v, heads)), heads);
}

inline void add_mlp(ParamStore& ps, const std::string& name, std::size_t d, std::size_t hidden, CounterRng& rng) {
  add_linear(ps, name + ".fc1", d, hidden, rng);
  add_linear(ps, name + ".fc2", hidden, d, rng);
}

inline Var mlp(const Binding& p, const std::string& name, const Var& x) {
  return linear(p, name + ".fc2", ops::gelu(linear(p, name + ".fc1", x)));
}

// Fused query/key/value projection d_in -> 3 x d_out. Keys carry no bias: a
// key bias shifts every score of a query by the same amount, which softmax
// cancels, so it would be a parameter with identically zero gradient.
inline void add_qkv(ParamStore& ps, const std::string& name, std::size_t d_in, std::size_t d_out, CounterRng& rng) {
  ps.add(name + ".w", trunc_normal({d_in, 3 * d_out}, rng));
  ps.add(name + ".bq", Tensor(Shape{d_out}));
  ps.add(name + ".bv", Tensor(Shape{d_out}));
}

struct Qkv {
  Var q, k, v;
};

inline Qkv qkv(const Binding& p, const std::string& name, const Var& x) {
  const Var t = ops::linear(x, p(name + ".w"));
  const std::size_t r = t.rank() - 1, d = t.shape().back() / 3;
  return {ops::add(ops::slice(t, r, 0, d), p(name + ".bq")), ops::slice(t, r, d, 2 * d), ops::add(ops::slice(t, r, 2 * d, 3 * d), p(name + ".bv"))};
}

// Pre-norm transformer block over sequences x (B, N, d):
//   x + Proj(Attn(LN x)), then + MLP(LN x).
inline void add_transformer_block(ParamStore& ps, const std::string& name, std::size_t d, std::size_t mlp_ratio, CounterRng& rng) {
  add_layer_norm(ps, name + ".ln1", d);
  add_qkv(ps, name + ".qkv", d, d, rng);
  add_linear(ps, name + ".proj", d, d, rng);
  add_layer_norm(ps, name + ".ln2", d);
  add_mlp(ps, name + ".mlp", d, mlp_ratio * d, rng);
}

inline Var self_attention(const Binding& p, const std::string& name, const Var& xn, std::size_t heads) {
  const auto [q, k, v] = qkv(p, name + ".qkv", xn);
  return linear(p, name + ".proj", attention(q, k, v, heads));
}

inline Var transformer_block(const Binding& p, const std::string& name, const Var& x, std::size_t heads) {
  const Var h = ops::add(x, self_attention(p, name, layer_norm(p, name + ".ln1", x), heads));
  return ops::add(h, mlp(p, name + ".mlp", layer_norm(p, name + ".ln2", h)));
}

}  // namespace msfm::nn
