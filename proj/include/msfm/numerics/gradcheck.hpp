#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "msfm/numerics/autograd.hpp"
#include "msfm/numerics/params.hpp"
#include "msfm/numerics/rng.hpp"

namespace msfm {

struct GradCheckOptions {
  double eps = 1e-5;
  // Coordinates sampled per parameter tensor; 0 checks every coordinate.
  std::size_t coords_per_tensor = 0;
  std::uint64_t seed = 0;
  // Restrict the check to parameters whose name starts with this prefix.
  std::string prefix;
  // Smallest denominator of the relative error. Gradients below the
  // resolution of the central difference cannot be measured relatively; see
  // fd_resolution.
  double abs_floor = 1e-12;
};

// Roundoff of a central difference at step `eps` for a loss of size `f`,
// allowing `ulps` units of accumulated rounding in each evaluation.
inline double fd_resolution(double f, double eps, double ulps = 16.0) {
  return ulps * std::numeric_limits<double>::epsilon() * std::max(std::abs(f), 1.0) / eps;
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  // Coordinates where both gradients were below abs_floor.
  std::size_t floored = 0;
  double loss = 0.0;
};

// Compares reverse-mode gradients of the scalar `f` against central
// differences, coordinate by coordinate:
//   |analytic - fd| / max(|analytic|, |fd|, abs_floor)
// `f` must be deterministic: it is evaluated twice at the unperturbed point and
// any difference is a contract violation.
inline GradCheckReport grad_check(ParamStore& params, const std::function<Var(const Binding&)>& f,
                                  const GradCheckOptions& opt = {}) {
  Binding bound(params, true);
  const Var loss = f(bound);
  require(loss.numel() == 1, "grad_check: f must return a scalar");
  const Gradients grads = backward(loss);
  const double base = f(Binding(params, false)).item();
  require(base == loss.item(), "grad_check: f is not deterministic (" + std::to_string(base) + " vs " +
                                   std::to_string(loss.item()) + ")");

  auto value_at = [&] { return f(Binding(params, false)).item(); };
  CounterRng rng = CounterRng::derive(opt.seed, Purpose::Sampling, {0x67726164ull});
  GradCheckReport rep;
  rep.loss = base;
  for (const auto& name : params.names()) {
    if (!opt.prefix.empty() && name.rfind(opt.prefix, 0) != 0) continue;
    Tensor& p = params.get(name);
    const Tensor* g = nullptr;
    if (auto it = bound.bound().find(name); it != bound.bound().end()) g = grads.find(it->second);
    const std::size_t n = p.numel();
    const std::size_t count = opt.coords_per_tensor == 0 ? n : std::min(n, opt.coords_per_tensor);
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t idx = opt.coords_per_tensor == 0 ? c : rng.below(n);
      const double orig = p[idx];
      p[idx] = orig + opt.eps;
      const double fp = value_at();
      p[idx] = orig - opt.eps;
      const double fm = value_at();
      p[idx] = orig;
      const double fd = (fp - fm) / (2.0 * opt.eps);
      const double an = g ? (*g)[idx] : 0.0;
      const double scale = std::max(std::abs(an), std::abs(fd));
      const double rel = std::abs(an - fd) / std::max(scale, opt.abs_floor);
      ++rep.coords_checked;
      rep.floored += scale < opt.abs_floor;
      if (rel >= rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_param = name;
        rep.worst_index = idx;
        rep.worst_analytic = an;
        rep.worst_numeric = fd;
      }
    }
  }
  return rep;
}

}  // namespace msfm
