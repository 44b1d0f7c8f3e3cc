#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "msfm/numerics/layers.hpp"

namespace msfm::tok {

// Projected-query attention: one learned query attends over a projected token
// set and emits a single vector.
//
//   u_i = P x_i + b_P + r_i        (r_i: role embedding of token i, optional)
//   k_i = K u_i
//   a   = softmax_i(q . k_i / sqrt(dh))   per head
//   y   = O (sum_i a_i u_i) + b_O
//
// Values are the projected tokens themselves, so a single token maps to
// O(u) + b_O exactly.
struct PqaShape {
  std::size_t in = 0, fused = 0, out = 0, roles = 0, heads = 1;
};

// Query, key map and output map; shared by the plain form below and by
// callers that project their tokens themselves (per-sensor fusion).
inline void add_pqa_head(ParamStore& ps, const std::string& name, std::size_t fused, std::size_t out, std::size_t heads,
                         CounterRng& rng) {
  require(fused % heads == 0, name + ": fusion width not divisible by heads");
  ps.add(name + ".query", nn::trunc_normal({fused}, rng));
  ps.add(name + ".key.w", nn::trunc_normal({fused, fused}, rng));
  ps.add(name + ".out.w", nn::eye(fused, out));
  ps.add(name + ".out.b", Tensor(Shape{out}));
}

inline void add_pqa(ParamStore& ps, const std::string& name, const PqaShape& s, CounterRng& rng) {
  nn::add_linear(ps, name + ".in", s.in, s.fused, rng);
  if (s.roles > 0) ps.add(name + ".role", nn::trunc_normal({s.roles, s.fused}, rng));
  add_pqa_head(ps, name, s.fused, s.out, s.heads, rng);
}

// Attention of the learned query over already projected tokens u (L, n, F).
inline Var pqa_attend(const Binding& p, const std::string& name, const Var& u, std::size_t heads) {
  require(u.rank() == 3 && u.dim(1) >= 1, name + ": expected a non-empty (L, n, F) token set, got " + shape_str(u.shape()));
  const std::size_t L = u.dim(0), n = u.dim(1), F = u.dim(2);
  require(F % heads == 0, name + ": fusion width not divisible by heads");
  const std::size_t dh = F / heads;
  const Var k = ops::reshape(ops::linear(u, p(name + ".key.w")), {L, n, heads, dh});
  const Var q = ops::reshape(p(name + ".query"), {heads, dh});
  const Var scores = ops::scale(ops::sum_last(ops::mul(k, q)), 1.0 / std::sqrt(static_cast<double>(dh)));  // (L, n, h)
  const Var w = ops::softmax_last(ops::permute(scores, {0, 2, 1}));                                       // (L, h, n)
  const Var v = ops::reshape(ops::permute(ops::reshape(u, {L, n, heads, dh}), {0, 2, 1, 3}), {L * heads, n, dh});
  const Var mixed = ops::reshape(ops::bmm(ops::reshape(w, {L * heads, 1, n}), v), {L, F});
  return nn::linear(p, name + ".out", mixed);
}

// tokens (L, n, in) -> (L, out): L independent sets of n tokens each. `roles`
// (length n) indexes rows of the role table; empty means no role embeddings.
inline Var pqa(const Binding& p, const std::string& name, const Var& tokens, std::span<const std::size_t> roles, std::size_t heads) {
  require(tokens.rank() == 3 && tokens.dim(1) >= 1, name + ": expected a non-empty (L, n, W) token set, got " + shape_str(tokens.shape()));
  const std::size_t n = tokens.dim(1);
  Var u = nn::linear(p, name + ".in", tokens);
  if (!roles.empty()) {
    require(roles.size() == n, name + ": one role id per token required");
    const Var table = p(name + ".role");
    std::vector<Var> rows;
    for (auto r : roles) {
      require(r < table.dim(0), name + ": role id out of range");
      rows.push_back(ops::slice(table, 0, r, r + 1));
    }
    u = ops::add(u, ops::concat(rows, 0));
  }
  return pqa_attend(p, name, u, heads);
}

}  // namespace msfm::tok
