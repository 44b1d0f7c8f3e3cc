#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "msfm/numerics/rng.hpp"
#include "msfm/numerics/tensor.hpp"
#include "msfm/synth/dataset.hpp"

namespace msfm::pre {

struct ViewPlan {
  std::size_t global_views = 2;         // V
  std::size_t local_views = 4;          // N
  std::size_t global_sensor_count = 4;
  std::pair<double, double> global_scale{0.4, 1.0};
  std::pair<double, double> local_scale{0.1, 0.4};
};

struct AugmentConfig {
  double gain_jitter = 0.1;    // multiplicative, x * (1 + gain_jitter * U[-1, 1])
  double offset_jitter = 0.02;  // additive, + offset_jitter * U[-1, 1]
  double blur_prob = 0.5;
  std::pair<double, double> blur_sigma{0.1, 1.0};  // in pixels
  double flip_prob = 0.5;
};

// Footprint-relative square [x0, x0 + side) x [y0, y0 + side) in [0, 1]^2.
struct CropBox {
  double x0 = 0.0, y0 = 0.0, side = 1.0;
  bool operator==(const CropBox&) const = default;
};

enum class ViewRole { Global, Local };

struct View {
  ViewRole role = ViewRole::Global;
  CropBox crop;
  bool flip_x = false, flip_y = false;
  std::map<std::string, Tensor> rasters;  // sensor id -> (C, crop_px, crop_px)

  std::set<std::string> sensors() const {
    std::set<std::string> s;
    for (const auto& [id, _] : rasters) s.insert(id);
    return s;
  }
};

// Bilinear resampling of the footprint window `box` of x (C, H, W) back onto
// an H x W grid. Sample positions are pixel centres; the full box reproduces x
// exactly.
inline Tensor crop_resize(const Tensor& x, const CropBox& box) {
  require(x.rank() == 3, "crop_resize: expected (C, H, W), got " + shape_str(x.shape()));
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  struct Tap {
    std::size_t i0, i1;
    double f;
  };
  auto taps = [](std::size_t n, double origin, double side) {
    std::vector<Tap> t(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double s = std::clamp(origin * static_cast<double>(n) + (static_cast<double>(i) + 0.5) * side - 0.5, 0.0,
                                  static_cast<double>(n - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(s));
      t[i] = {i0, std::min(i0 + 1, n - 1), s - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(H, box.y0, box.side), tx = taps(W, box.x0, box.side);
  Tensor out(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const double* src = x.ptr() + c * H * W;
    for (std::size_t i = 0; i < H; ++i) {
      const Tap& a = ty[i];
      for (std::size_t j = 0; j < W; ++j) {
        const Tap& b = tx[j];
        const double top = src[a.i0 * W + b.i0] * (1.0 - b.f) + src[a.i0 * W + b.i1] * b.f;
        const double bot = src[a.i1 * W + b.i0] * (1.0 - b.f) + src[a.i1 * W + b.i1] * b.f;
        out[(c * H + i) * W + j] = top * (1.0 - a.f) + bot * a.f;
      }
    }
  }
  return out;
}

// Normalized discrete Gaussian of radius ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  require(sigma > 0.0, "gaussian_kernel: sigma must be positive");
  const auto r = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double z = 0.0;
  for (std::ptrdiff_t i = -r; i <= r; ++i) z += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  for (auto& v : k) v /= z;
  return k;
}

// Separable Gaussian blur of every channel, edge-replicated border.
inline Tensor gaussian_blur(const Tensor& x, double sigma) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const auto k = gaussian_kernel(sigma);
  const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
  auto clampi = [](std::ptrdiff_t i, std::size_t n) { return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1)); };
  Tensor tmp(x.shape()), out(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const double* s = x.ptr() + c * H * W;
    double* t = tmp.ptr() + c * H * W;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double acc = 0.0;
        for (std::ptrdiff_t d = -r; d <= r; ++d) acc += k[static_cast<std::size_t>(d + r)] * s[i * W + clampi(static_cast<std::ptrdiff_t>(j) + d, W)];
        t[i * W + j] = acc;
      }
    double* o = out.ptr() + c * H * W;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double acc = 0.0;
        for (std::ptrdiff_t d = -r; d <= r; ++d) acc += k[static_cast<std::size_t>(d + r)] * t[clampi(static_cast<std::ptrdiff_t>(i) + d, H) * W + j];
        o[i * W + j] = acc;
      }
  }
  return out;
}

inline Tensor flip(const Tensor& x, bool fx, bool fy) {
  if (!fx && !fy) return x;
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor out(x.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) out[(c * H + i) * W + j] = x[(c * H + (fy ? H - 1 - i : i)) * W + (fx ? W - 1 - j : j)];
  return out;
}

inline CropBox draw_crop(CounterRng& rng, std::pair<double, double> scale) {
  const auto [lo, hi] = scale;
  require(0.0 < lo && lo <= hi && hi <= 1.0, "crop scale interval must satisfy 0 < lo <= hi <= 1");
  CropBox b;
  b.side = std::sqrt(rng.uniform(lo, hi));
  b.x0 = rng.uniform() * (1.0 - b.side);
  b.y0 = rng.uniform() * (1.0 - b.side);
  return b;
}

// V global views of `global_sensor_count` sensors drawn without replacement
// from the available set, then N single-sensor local views drawn with
// replacement from the union of the global sensors. One crop per view, applied
// to every sensor at its own resolution.
inline std::vector<View> build_views(const synth::MultiSample& s, const ViewPlan& plan, std::uint64_t seed) {
  const std::set<std::string> present = s.available();
  const std::vector<std::string> avail(present.begin(), present.end());
  require(plan.global_sensor_count >= 1 && avail.size() >= plan.global_sensor_count,
          s.location_id + ": " + std::to_string(avail.size()) + " modalities, views need " + std::to_string(plan.global_sensor_count));
  CounterRng rng = CounterRng::derive(seed, Purpose::Augment, {synth::id_hash(s.location_id), 0x76696577ull});
  std::vector<View> views;
  std::set<std::string> used;
  for (std::size_t v = 0; v < plan.global_views; ++v) {
    std::vector<std::string> pool = avail;
    shuffle_in_place(pool, rng);
    View view;
    view.crop = draw_crop(rng, plan.global_scale);
    for (std::size_t k = 0; k < plan.global_sensor_count; ++k) {
      view.rasters.emplace(pool[k], crop_resize(s.rasters.at(pool[k]), view.crop));
      used.insert(pool[k]);
    }
    views.push_back(std::move(view));
  }
  const std::vector<std::string> local_pool(used.begin(), used.end());
  for (std::size_t v = 0; v < plan.local_views; ++v) {
    require(!local_pool.empty(), "local views need at least one global view");
    const std::string& id = local_pool[rng.below(local_pool.size())];
    View view;
    view.role = ViewRole::Local;
    view.crop = draw_crop(rng, plan.local_scale);
    view.rasters.emplace(id, crop_resize(s.rasters.at(id), view.crop));
    views.push_back(std::move(view));
  }
  return views;
}

// Flips shared by the view's sensors; gain/offset jitter and blur drawn
// independently per sensor.
inline View augment_view(const View& in, const AugmentConfig& a, std::uint64_t seed) {
  CounterRng rng = CounterRng::derive(seed, Purpose::Augment, {0x61756775ull});
  View out = in;
  out.flip_x = rng.bernoulli(a.flip_prob);
  out.flip_y = rng.bernoulli(a.flip_prob);
  for (auto& [id, x] : out.rasters) {
    CounterRng r = rng.fork(synth::id_hash(id));
    const double gain = 1.0 + a.gain_jitter * r.uniform(-1.0, 1.0);
    const double offset = a.offset_jitter * r.uniform(-1.0, 1.0);
    const bool blur = r.bernoulli(a.blur_prob);
    const double sigma = r.uniform(a.blur_sigma.first, a.blur_sigma.second);
    Tensor t = flip(x, out.flip_x, out.flip_y);
    if (blur && sigma > 0.0) t = gaussian_blur(t, sigma);
    if (gain != 1.0 || offset != 0.0)
      for (auto& v : t.storage()) v = v * gain + offset;
    x = std::move(t);
  }
  return out;
}

}  // namespace msfm::pre
