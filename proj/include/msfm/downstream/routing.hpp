#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "msfm/backbone/backbone.hpp"

namespace msfm::ds {

enum class RemapMode { Interpolate, Average, Identity };

inline const char* remap_name(RemapMode m) {
  switch (m) {
    case RemapMode::Interpolate: return "interpolate";
    case RemapMode::Average: return "average";
    case RemapMode::Identity: return "identity";
  }
  return "?";
}

namespace detail {

inline void check_increasing(const std::vector<double>& c, const std::string& what) {
  require(!c.empty(), what + ": no band centres");
  for (std::size_t i = 1; i < c.size(); ++i)
    require(c[i] > c[i - 1], what + ": band centres must be strictly increasing");
}

// Response interval of target band j: midpoints to its neighbours, the outer
// bands mirrored by half their inner spacing. Half-open [lo, hi).
inline std::pair<double, double> response_interval(const std::vector<double>& t, std::size_t j) {
  const std::size_t n = t.size();
  if (n == 1) return {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  const double lo = j > 0 ? 0.5 * (t[j - 1] + t[j]) : t[0] - 0.5 * (t[1] - t[0]);
  const double hi = j + 1 < n ? 0.5 * (t[j] + t[j + 1]) : t[n - 1] + 0.5 * (t[n - 1] - t[n - 2]);
  return {lo, hi};
}

}  // namespace detail

// Per target band, a list of (source band, weight); the same for every pixel.
struct RemapMatrix {
  std::vector<std::vector<std::pair<std::size_t, double>>> rows;
};

inline RemapMatrix remap_matrix(const std::vector<double>& src, const std::vector<double>& dst, RemapMode mode) {
  detail::check_increasing(src, "remap_spectra source");
  detail::check_increasing(dst, "remap_spectra target");
  RemapMatrix m;
  m.rows.resize(dst.size());
  switch (mode) {
    case RemapMode::Identity:
      require(src == dst, "remap_spectra: identity mode needs identical band centres");
      for (std::size_t j = 0; j < dst.size(); ++j) m.rows[j] = {{j, 1.0}};
      break;
    case RemapMode::Interpolate:
      require(src.size() >= 2, "remap_spectra: interpolation needs at least two source bands");
      for (std::size_t j = 0; j < dst.size(); ++j) {
        const double x = dst[j];
        if (x <= src.front()) {
          m.rows[j] = {{0, 1.0}};
        } else if (x >= src.back()) {
          m.rows[j] = {{src.size() - 1, 1.0}};
        } else {
          const auto hi = static_cast<std::size_t>(std::upper_bound(src.begin(), src.end(), x) - src.begin());
          const std::size_t lo = hi - 1;
          const double w = (x - src[lo]) / (src[hi] - src[lo]);
          m.rows[j] = {{lo, 1.0 - w}, {hi, w}};
        }
      }
      break;
    case RemapMode::Average:
      for (std::size_t j = 0; j < dst.size(); ++j) {
        const auto [lo, hi] = detail::response_interval(dst, j);
        std::vector<std::size_t> in;
        for (std::size_t i = 0; i < src.size(); ++i)
          if (src[i] >= lo && src[i] < hi) in.push_back(i);
        if (in.empty()) {
          std::size_t best = 0;
          for (std::size_t i = 1; i < src.size(); ++i)
            if (std::abs(src[i] - dst[j]) < std::abs(src[best] - dst[j])) best = i;
          in.push_back(best);
        }
        for (auto i : in) m.rows[j].emplace_back(i, 1.0 / static_cast<double>(in.size()));
      }
      break;
  }
  return m;
}

// Raster (C_src, H, W) with band centres `src` -> (C_dst, H, W) at `dst`.
inline Tensor remap_spectra(const Tensor& x, const std::vector<double>& src, const std::vector<double>& dst, RemapMode mode) {
  require(x.rank() == 3 && x.dim(0) == src.size(),
          "remap_spectra: raster " + shape_str(x.shape()) + " does not carry " + std::to_string(src.size()) + " bands");
  const RemapMatrix m = remap_matrix(src, dst, mode);
  const std::size_t P = x.dim(1) * x.dim(2);
  Tensor out(Shape{dst.size(), x.dim(1), x.dim(2)});
  for (std::size_t j = 0; j < dst.size(); ++j)
    for (const auto& [i, w] : m.rows[j])
      for (std::size_t p = 0; p < P; ++p) out[j * P + p] += w * x[i * P + p];
  return out;
}

// ---- branch selection -----------------------------------------------------------

// Jaccard overlap of the [first, last] band-centre ranges. Non-optical specs
// have no range; they match a branch of the same kind fully and anything
// else not at all.
inline double spectral_jaccard(const synth::SensorSpec& a, const synth::SensorSpec& b) {
  if (!a.optical() || !b.optical()) return a.kind == b.kind && !a.optical() && !b.optical() ? 1.0 : 0.0;
  const double a0 = a.band_centers.front(), a1 = a.band_centers.back();
  const double b0 = b.band_centers.front(), b1 = b.band_centers.back();
  const double inter = std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  const double uni = std::max(a1, b1) - std::min(a0, b0);
  return uni > 0.0 ? inter / uni : (a0 == b0 ? 1.0 : 0.0);
}

inline double branch_score(const synth::SensorSpec& source, const synth::SensorSpec& branch) {
  require(source.gsd > 0.0 && branch.gsd > 0.0, "branch_score: ground sampling distances must be positive");
  return spectral_jaccard(source, branch) - 0.1 * std::abs(std::log(source.gsd / branch.gsd));
}

// Highest score wins; exact ties go to the branch with more bands, then to
// the earlier one in the list.
inline std::string select_branch(const synth::SensorSpec& source, const std::vector<synth::SensorSpec>& branches) {
  require(!branches.empty(), "select_branch: no branches");
  std::size_t best = 0;
  double best_score = branch_score(source, branches[0]);
  for (std::size_t i = 1; i < branches.size(); ++i) {
    const double s = branch_score(source, branches[i]);
    if (s > best_score || (s == best_score && branches[i].channels > branches[best].channels)) {
      best = i;
      best_score = s;
    }
  }
  return branches[best].id;
}

// A spaceborne VNIR-SWIR imager unseen during pretraining: 220 bands over
// 357-2576 nm at 30 m.
inline synth::SensorSpec hyperion_like(std::size_t bands = 220) {
  synth::SensorSpec s;
  s.id = "eo1";
  s.kind = synth::SensorKind::HSI;
  for (std::size_t i = 0; i < bands; ++i) s.band_centers.push_back(357.0 + (2576.0 - 357.0) * static_cast<double>(i) / static_cast<double>(bands - 1));
  s.channels = bands;
  s.gsd = 30.0;
  return s;
}

// ---- route plans ----------------------------------------------------------------

enum class RouteMode { Single, Multi };

struct RoutePlan {
  RouteMode mode = RouteMode::Single;
  std::vector<std::string> branches;
  std::vector<RemapMode> remap;  // per branch
};

inline RemapMode default_remap(const synth::SensorSpec& source, const synth::SensorSpec& branch) {
  if (source.band_centers == branch.band_centers) return RemapMode::Identity;
  return branch.kind == synth::SensorKind::HSI ? RemapMode::Interpolate : RemapMode::Average;
}

inline void check_plan(const RoutePlan& plan, const bb::Model& m) {
  require(plan.branches.size() == plan.remap.size(), "route plan: one remap mode per branch");
  if (plan.mode == RouteMode::Single) {
    require(plan.branches.size() == 1, "route plan: single mode takes exactly one branch");
  } else {
    require(plan.branches.size() >= 2, "route plan: multi mode needs at least two branches");
  }
  for (const auto& b : plan.branches) require(m.suite[m.index(b)].optical(), "route plan: branch " + b + " is not optical");
}

// Single mode: the best-scoring optical branch. Multi mode: every optical
// branch of the suite, in suite order.
inline RoutePlan plan_route(const synth::SensorSpec& source, const bb::Model& m, RouteMode mode) {
  require(source.optical(), "plan_route: routing applies to optical sources");
  RoutePlan plan;
  plan.mode = mode;
  std::vector<synth::SensorSpec> optical;
  for (const auto& s : m.suite)
    if (s.optical()) optical.push_back(s);
  if (mode == RouteMode::Single) {
    plan.branches = {select_branch(source, optical)};
  } else {
    for (const auto& s : optical) plan.branches.push_back(s.id);
  }
  for (const auto& b : plan.branches) plan.remap.push_back(default_remap(source, m.suite[m.index(b)]));
  check_plan(plan, m);
  return plan;
}

// Spectral remap to the branch inventory, then a bilinear spatial resample to
// the branch crop when the sizes differ.
inline Tensor route_raster(const Tensor& x, const synth::SensorSpec& source, const synth::SensorSpec& branch, RemapMode mode) {
  Tensor r = remap_spectra(x, source.band_centers, branch.band_centers, mode);
  const std::size_t side = branch.crop_px;
  if (r.dim(1) == side && r.dim(2) == side) return r;
  const Var hwc = ops::permute(Var::constant(r), {1, 2, 0});
  return ops::permute(ops::resize_bilinear_hwc(hwc, side, side), {2, 0, 1}).value();
}

// ---- feature pyramids -----------------------------------------------------------

// Channels-last maps, finest first.
struct FeaturePyramid {
  std::vector<Var> maps;
  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w;
    for (const auto& v : maps) w.push_back(v.dim(2));
    return w;
  }
};

inline FeaturePyramid pyramid_of(const bb::Encoding& e) {
  FeaturePyramid f;
  for (const auto& g : e.pyramid) f.maps.push_back(g.hwc());
  return f;
}

inline FeaturePyramid encode_features(const Binding& p, const bb::Model& m, const std::map<std::string, Var>& rasters) {
  return pyramid_of(bb::encode(p, m, rasters));
}

// Runs the routed raster through each planned branch on its own and
// concatenates the pyramids stage by stage, in plan order.
inline FeaturePyramid multi_branch_features(const Binding& p, const bb::Model& m, const Tensor& x, const synth::SensorSpec& source,
                                            const RoutePlan& plan) {
  check_plan(plan, m);
  require(plan.mode == RouteMode::Multi, "multi_branch_features: plan is not in multi mode");
  std::vector<FeaturePyramid> parts;
  for (std::size_t i = 0; i < plan.branches.size(); ++i) {
    const auto& branch = m.suite[m.index(plan.branches[i])];
    parts.push_back(encode_features(p, m, {{branch.id, Var::constant(route_raster(x, source, branch, plan.remap[i]))}}));
  }
  FeaturePyramid out;
  for (std::size_t st = 0; st < parts.front().maps.size(); ++st) {
    std::vector<Var> level;
    for (const auto& f : parts) level.push_back(f.maps[st]);
    out.maps.push_back(ops::concat(level, 2));
  }
  return out;
}

// Single mode may carry non-optical companions (e.g. a co-registered S1
// raster), encoded together with the routed branch input as one sensor set.
inline FeaturePyramid routed_features(const Binding& p, const bb::Model& m, const Tensor& x, const synth::SensorSpec& source,
                                      const RoutePlan& plan, const std::map<std::string, Tensor>& companions = {}) {
  if (plan.mode == RouteMode::Multi) {
    require(companions.empty(), "routed_features: companions apply to single-branch routing only");
    return multi_branch_features(p, m, x, source, plan);
  }
  check_plan(plan, m);
  const auto& branch = m.suite[m.index(plan.branches[0])];
  std::map<std::string, Var> in{{branch.id, Var::constant(route_raster(x, source, branch, plan.remap[0]))}};
  for (const auto& [id, t] : companions) {
    const auto& spec = m.suite[m.index(id)];
    require(!spec.optical(), "routed_features: companion " + id + " is optical; route it instead");
    require(t.shape() == Shape({spec.channels, spec.crop_px, spec.crop_px}),
            "routed_features: companion " + id + " has shape " + shape_str(t.shape()));
    in.emplace(id, Var::constant(t));
  }
  return encode_features(p, m, in);
}

}  // namespace msfm::ds
