#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "msfm/numerics/layers.hpp"

namespace msfm::pre {

// ---- projector -------------------------------------------------------------

// Linear-GELU-Linear-GELU-Linear. The last layer stays linear so the
// projections can take either sign, which the Gaussian target needs. Weights
// use fan-in scaling so the projections start at unit order of magnitude.
inline void add_projector(ParamStore& ps, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, CounterRng& rng) {
  const std::size_t dims[4] = {in, hidden, hidden, out};
  for (std::size_t l = 0; l < 3; ++l) {
    const std::string layer = name + "." + std::to_string(l);
    ps.add(layer + ".w", nn::trunc_normal({dims[l], dims[l + 1]}, rng, 1.0 / std::sqrt(static_cast<double>(dims[l]))));
    ps.add(layer + ".b", Tensor(Shape{dims[l + 1]}));
  }
}

inline Var projector(const Binding& p, const std::string& name, const Var& x) {
  const Var h = ops::gelu(nn::linear(p, name + ".0", x));
  return nn::linear(p, name + ".2", ops::gelu(nn::linear(p, name + ".1", h)));
}

// ---- teacher target and invariance ------------------------------------------

// Mean of the teacher projections of one sample's global views, cut from the
// graph whatever the teacher binding says.
inline Var teacher_target(const std::vector<Var>& teacher_projections) {
  require(!teacher_projections.empty(), "teacher_target: no global views");
  const Shape& s = teacher_projections.front().shape();
  Tensor acc(s);
  for (const auto& h : teacher_projections) {
    require(h.shape() == s, "teacher_target: projection widths differ");
    for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += h.value()[i];
  }
  const double inv = 1.0 / static_cast<double>(teacher_projections.size());
  for (auto& v : acc.storage()) v *= inv;
  return Var::constant(std::move(acc));
}

// z (V, B, P) stacked view-major, targets (B, P):
//   (1 / (B V)) sum_b sum_v ||z[v, b] - target[b]||^2
inline Var invariance_loss(const Var& z, const Var& targets) {
  require(z.rank() == 3 && targets.rank() == 2 && z.dim(1) == targets.dim(0) && z.dim(2) == targets.dim(1),
          "invariance_loss: projections " + shape_str(z.shape()) + " do not match targets " + shape_str(targets.shape()));
  return ops::scale(ops::sq_norm(ops::sub(z, targets)), 1.0 / static_cast<double>(z.dim(0) * z.dim(1)));
}

// ---- SIGReg -------------------------------------------------------------------

struct SigRegConfig {
  std::size_t directions = 64;
  std::size_t nodes = 17;
  double t_max = 4.0;
  std::size_t min_rows = 8;
};

// Unit directions (d, M), one per column, seeded per (seed, step).
inline Tensor sigreg_directions(std::size_t d, std::size_t count, std::uint64_t seed, std::uint64_t step) {
  CounterRng rng = CounterRng::derive(seed, Purpose::SigReg, {step});
  Tensor a(Shape{d, count});
  for (std::size_t j = 0; j < count; ++j) {
    double n2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double v = rng.normal();
      a.at(i, j) = v;
      n2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (std::size_t i = 0; i < d; ++i) a.at(i, j) *= inv;
  }
  return a;
}

// Frequency grid t_k on [-t_max, t_max] with trapezoid weights times the
// Gaussian window e^{-t^2/2}, and the target characteristic function e^{-t^2/2}.
struct EcfGrid {
  std::vector<double> t, w, target;
  double step = 0.0;
};

inline EcfGrid ecf_grid(const SigRegConfig& c) {
  require(c.nodes >= 2 && c.t_max > 0.0, "sigreg: need at least two frequency nodes on a positive range");
  EcfGrid g;
  g.step = 2.0 * c.t_max / static_cast<double>(c.nodes - 1);
  for (std::size_t k = 0; k < c.nodes; ++k) {
    const double t = -c.t_max + g.step * static_cast<double>(k);
    const double phi = std::exp(-0.5 * t * t);
    g.t.push_back(t);
    g.target.push_back(phi);
    g.w.push_back((k == 0 || k + 1 == c.nodes ? 0.5 : 1.0) * g.step * phi);
  }
  return g;
}

namespace detail {

// cos(t_k x), sin(t_k x) for every node by rotating from t_0 in steps of h x.
inline void ecf_terms(const EcfGrid& g, double x, double* c, double* s) {
  const double c0 = std::cos(g.t[0] * x), s0 = std::sin(g.t[0] * x);
  const double ch = std::cos(g.step * x), sh = std::sin(g.step * x);
  c[0] = c0;
  s[0] = s0;
  for (std::size_t k = 1; k < g.t.size(); ++k) {
    c[k] = c[k - 1] * ch - s[k - 1] * sh;
    s[k] = s[k - 1] * ch + c[k - 1] * sh;
  }
}

// Per-column empirical characteristic function means over the n rows of p (n, M).
inline void ecf_moments(const EcfGrid& g, const Tensor& p, std::vector<double>& C, std::vector<double>& S) {
  const std::size_t n = p.dim(0), M = p.dim(1), K = g.t.size();
  C.assign(M * K, 0.0);
  S.assign(M * K, 0.0);
  std::vector<double> c(K), s(K);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < M; ++j) {
      ecf_terms(g, p.at(i, j), c.data(), s.data());
      for (std::size_t k = 0; k < K; ++k) {
        C[j * K + k] += c[k];
        S[j * K + k] += s[k];
      }
    }
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& v : C) v *= inv;
  for (auto& v : S) v *= inv;
}

}  // namespace detail

// Mean over the columns of p (n, M) of
//   n * sum_k w_k [ (C_k - e^{-t_k^2/2})^2 + S_k^2 ]
// with C_k, S_k the column's empirical mean of cos(t_k x), sin(t_k x).
inline double ecf_statistic(const Tensor& p, const SigRegConfig& c) {
  require(p.rank() == 2 && p.dim(0) >= c.min_rows, "sigreg: need at least " + std::to_string(c.min_rows) + " rows, got " + shape_str(p.shape()));
  const EcfGrid g = ecf_grid(c);
  std::vector<double> C, S;
  detail::ecf_moments(g, p, C, S);
  const std::size_t M = p.dim(1), K = g.t.size();
  double total = 0.0;
  for (std::size_t j = 0; j < M; ++j)
    for (std::size_t k = 0; k < K; ++k) {
      const double dc = C[j * K + k] - g.target[k], ds = S[j * K + k];
      total += g.w[k] * (dc * dc + ds * ds);
    }
  return static_cast<double>(p.dim(0)) * total / static_cast<double>(M);
}

// The statistic as a graph op on projected rows p (n, M).
inline Var ecf_distance(const Var& p, const SigRegConfig& c) {
  const double value = ecf_statistic(p.value(), c);
  return make_op("ecf_distance", Tensor(Shape{}, value), {p}, [pv_ptr = p.node()->value, c](const Tensor& go, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    const Tensor& pv = *pv_ptr;
    const EcfGrid g = ecf_grid(c);
    std::vector<double> C, S;
    detail::ecf_moments(g, pv, C, S);
    const std::size_t n = pv.dim(0), M = pv.dim(1), K = g.t.size();
    // dT/dx_ij = (2 / M) sum_k w_k t_k [ S_k cos(t_k x) - (C_k - g_k) sin(t_k x) ]
    const double scale = 2.0 * go.item() / static_cast<double>(M);
    std::vector<double> cs(K), sn(K);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < M; ++j) {
        detail::ecf_terms(g, pv.at(i, j), cs.data(), sn.data());
        double acc = 0.0;
        for (std::size_t k = 0; k < K; ++k) acc += g.w[k] * g.t[k] * (S[j * K + k] * cs[k] - (C[j * K + k] - g.target[k]) * sn[k]);
        (*gi[0]).at(i, j) += scale * acc;
      }
  });
}

// SIGReg on stacked projections y (n, P): project onto the step's seeded unit
// directions and measure the distance of each 1-D marginal to N(0, 1).
inline Var sigreg(const Var& y, const SigRegConfig& c, std::uint64_t seed, std::uint64_t step) {
  require(y.rank() == 2 && y.dim(0) >= c.min_rows, "sigreg: need at least " + std::to_string(c.min_rows) + " rows, got " + shape_str(y.shape()));
  const Var a = Var::constant(sigreg_directions(y.dim(1), c.directions, seed, step));
  return ecf_distance(ops::linear(y, a), c);
}

// ---- combined objective ------------------------------------------------------

struct LossParts {
  Var total, inv, sig;
};

inline LossParts total_loss(const Var& z, const Var& targets, double lambda, const SigRegConfig& c, std::uint64_t seed, std::uint64_t step) {
  require(lambda >= 0.0 && lambda <= 1.0, "total_loss: lambda must lie in [0, 1]");
  LossParts out;
  out.inv = invariance_loss(z, targets);
  out.sig = sigreg(ops::reshape(z, {z.dim(0) * z.dim(1), z.dim(2)}), c, seed, step);
  if (lambda == 0.0)
    out.total = out.inv;
  else if (lambda == 1.0)
    out.total = out.sig;
  else
    out.total = ops::add(ops::scale(out.inv, 1.0 - lambda), ops::scale(out.sig, lambda));
  return out;
}

}  // namespace msfm::pre
