#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msfm/numerics/error.hpp"
#include "msfm/numerics/rng.hpp"
#include "msfm/numerics/tensor.hpp"
#include "msfm/synth/sensors.hpp"

namespace msfm::synth {

// Natural cubic spline through equally spaced knots on [lo, hi]; constant
// extrapolation outside the range.
class SmoothCurve {
 public:
  SmoothCurve() = default;
  SmoothCurve(double lo, double hi, std::vector<double> knots) : lo_(lo), hi_(hi), y_(std::move(knots)) {
    require(y_.size() >= 2 && hi > lo, "SmoothCurve: need two knots over a non-empty range");
    const std::size_t n = y_.size();
    h_ = (hi_ - lo_) / static_cast<double>(n - 1);
    m_.assign(n, 0.0);
    if (n > 2) {
      // Tridiagonal system for interior second derivatives (Thomas algorithm).
      std::vector<double> c(n, 0.0), d(n, 0.0);
      for (std::size_t i = 1; i + 1 < n; ++i) {
        const double rhs = 6.0 * (y_[i + 1] - 2.0 * y_[i] + y_[i - 1]) / (h_ * h_);
        const double denom = 4.0 - (i > 1 ? c[i - 1] : 0.0);
        c[i] = 1.0 / denom;
        d[i] = (rhs - (i > 1 ? d[i - 1] : 0.0)) / denom;
      }
      for (std::size_t i = n - 2; i >= 1; --i) {
        m_[i] = d[i] - c[i] * m_[i + 1];
        if (i == 1) break;
      }
    }
  }

  double operator()(double x) const {
    x = std::clamp(x, lo_, hi_);
    auto i = static_cast<std::size_t>((x - lo_) / h_);
    i = std::min(i, y_.size() - 2);
    const double t0 = lo_ + static_cast<double>(i) * h_;
    const double a = (t0 + h_ - x) / h_, b = (x - t0) / h_;
    return a * y_[i] + b * y_[i + 1] + ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h_ * h_ / 6.0;
  }

  const std::vector<double>& knots() const noexcept { return y_; }

 private:
  double lo_ = 0.0, hi_ = 1.0, h_ = 1.0;
  std::vector<double> y_, m_;
};

struct SceneOptions {
  std::size_t materials = 6;
  // Gaussian smoothing of the latent noise, as a fraction of the scene side.
  double smoothing = 1.0 / 16.0;
  // Softmax inverse temperature turning smoothed fields into abundances.
  double sharpness = 3.0;
  std::size_t spectrum_knots = 9;
};

inline constexpr double kSpectrumLo = 400.0;
inline constexpr double kSpectrumHi = 2500.0;
// Clean reflectances and field values stay inside this range so that sensor
// noise up to five sigma never reaches zero.
inline constexpr double kValueLo = 0.05;
inline constexpr double kValueHi = 0.95;

struct LatentScene {
  std::size_t px = 0;       // scene side in pixels
  double gsd = 0.0;         // metres per scene pixel
  Tensor abundance;         // (K, px, px), sums to 1 over K
  std::vector<SmoothCurve> spectra;
  Tensor sar;               // (2, px, px)
  Tensor lst;               // (1, px, px)

  std::size_t materials() const { return spectra.size(); }
  double reflectance(std::size_t k, double nm) const { return std::clamp(spectra[k](nm), kValueLo, kValueHi); }
};

// Separable Gaussian blur of an (n, n) field with mirrored borders.
inline std::vector<double> gaussian_blur(const std::vector<double>& f, std::size_t n, double sigma) {
  if (sigma <= 0.0) return f;
  const auto r = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double ks = 0.0;
  for (std::ptrdiff_t i = -r; i <= r; ++i) ks += (k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * double(i * i) / (sigma * sigma)));
  for (auto& v : k) v /= ks;
  const auto N = static_cast<std::ptrdiff_t>(n);
  auto mirror = [N](std::ptrdiff_t i) {
    if (N == 1) return std::ptrdiff_t{0};
    const std::ptrdiff_t period = 2 * (N - 1);
    i = ((i % period) + period) % period;
    return i < N ? i : period - i;
  };
  std::vector<double> tmp(n * n, 0.0), out(n * n, 0.0);
  for (std::ptrdiff_t y = 0; y < N; ++y)
    for (std::ptrdiff_t x = 0; x < N; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * f[static_cast<std::size_t>(y * N + mirror(x + i))];
      tmp[static_cast<std::size_t>(y * N + x)] = s;
    }
  for (std::ptrdiff_t y = 0; y < N; ++y)
    for (std::ptrdiff_t x = 0; x < N; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(mirror(y + i) * N + x)];
      out[static_cast<std::size_t>(y * N + x)] = s;
    }
  return out;
}

namespace detail {

// Smoothed white noise rescaled to zero mean and unit variance.
inline std::vector<double> smooth_field(CounterRng& rng, std::size_t n, double sigma) {
  std::vector<double> f(n * n);
  for (auto& v : f) v = rng.normal();
  f = gaussian_blur(f, n, sigma);
  double mean = 0.0, var = 0.0;
  for (double v : f) mean += v;
  mean /= static_cast<double>(f.size());
  for (double v : f) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(f.size()));
  for (auto& v : f) v = sd > 0.0 ? (v - mean) / sd : 0.0;
  return f;
}

}  // namespace detail

// Scene at the finest GSD of the suite, covering the common footprint.
inline LatentScene generate_scene(std::uint64_t seed, const Suite& suite, const SceneOptions& opt = {}) {
  require(!suite.empty(), "generate_scene: empty sensor suite");
  require(opt.materials >= 1, "generate_scene: need at least one material");
  double gsd = suite[0].gsd;
  for (const auto& s : suite) gsd = std::min(gsd, s.gsd);
  LatentScene sc;
  sc.gsd = gsd;
  sc.px = static_cast<std::size_t>(std::llround(suite[0].footprint() / gsd));
  const std::size_t n = sc.px, K = opt.materials;
  const double sigma = std::max(1.0, opt.smoothing * static_cast<double>(n));
  CounterRng rng = CounterRng::derive(seed, Purpose::Scene);

  sc.abundance = Tensor(Shape{K, n, n});
  std::vector<std::vector<double>> z(K);
  for (std::size_t k = 0; k < K; ++k) z[k] = detail::smooth_field(rng, n, sigma);
  for (std::size_t p = 0; p < n * n; ++p) {
    double m = -1e300;
    for (std::size_t k = 0; k < K; ++k) m = std::max(m, opt.sharpness * z[k][p]);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += (sc.abundance[k * n * n + p] = std::exp(opt.sharpness * z[k][p] - m));
    for (std::size_t k = 0; k < K; ++k) sc.abundance[k * n * n + p] /= s;
  }

  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> knots(opt.spectrum_knots);
    for (auto& v : knots) v = rng.uniform(0.1, 0.9);
    sc.spectra.emplace_back(kSpectrumLo, kSpectrumHi, std::move(knots));
  }

  // SAR backscatter and surface temperature are linear in the abundances plus
  // their own smooth texture, so every sensor sees the same layout.
  sc.sar = Tensor(Shape{2, n, n});
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<double> coef(K);
    for (auto& v : coef) v = rng.uniform(0.15, 0.85);
    const auto tex = detail::smooth_field(rng, n, sigma);
    for (std::size_t p = 0; p < n * n; ++p) {
      double v = 0.05 * tex[p];
      for (std::size_t k = 0; k < K; ++k) v += coef[k] * sc.abundance[k * n * n + p];
      sc.sar[c * n * n + p] = std::clamp(v, kValueLo, kValueHi);
    }
  }
  sc.lst = Tensor(Shape{1, n, n});
  const auto tex = detail::smooth_field(rng, n, sigma);
  for (std::size_t p = 0; p < n * n; ++p) sc.lst[p] = std::clamp(0.25 + 0.5 * sc.abundance[p] + 0.05 * tex[p], kValueLo, kValueHi);
  return sc;
}

// Area mean of a (C, n, n) field over f x f blocks -> (C, n/f, n/f).
inline Tensor block_mean(const Tensor& t, std::size_t f) {
  const std::size_t C = t.dim(0), n = t.dim(1);
  require(t.dim(2) == n && n % f == 0, "block_mean: extent not divisible by factor");
  const std::size_t m = n / f;
  Tensor out(Shape{C, m, m});
  const double inv = 1.0 / static_cast<double>(f * f);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < m; ++y)
      for (std::size_t x = 0; x < m; ++x) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < f; ++dy)
          for (std::size_t dx = 0; dx < f; ++dx) s += t[(c * n + y * f + dy) * n + x * f + dx];
        out[(c * m + y) * m + x] = s * inv;
      }
  return out;
}

inline std::uint64_t id_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
  return h;
}

// Renders `spec` from the scene: abundances are block-averaged to the sensor
// GSD, optical sensors mix the material spectra sampled at their band
// centres, SAR/LST average their fields. Gaussian noise with the spec's sigma
// (or `sigma_override` when non-negative) is added and values are clamped to
// [0, 1 + 5 sigma]. Output layout (C, crop_px, crop_px).
inline Tensor render_sensor(const LatentScene& scene, const SensorSpec& spec, std::uint64_t noise_seed, double sigma_override = -1.0) {
  const double ratio = spec.gsd / scene.gsd;
  const auto f = static_cast<std::size_t>(std::llround(ratio));
  require(f >= 1 && std::abs(ratio - static_cast<double>(f)) < 1e-9 && f * spec.crop_px == scene.px,
          "render_sensor: " + spec.id + " does not tile the scene footprint at an integer factor");
  const std::size_t m = spec.crop_px, P = m * m;
  Tensor out(Shape{spec.channels, m, m});
  if (spec.optical()) {
    const Tensor a = block_mean(scene.abundance, f);
    const std::size_t K = scene.materials();
    for (std::size_t c = 0; c < spec.channels; ++c) {
      std::vector<double> r(K);
      for (std::size_t k = 0; k < K; ++k) r[k] = scene.reflectance(k, spec.band_centers[c]);
      for (std::size_t p = 0; p < P; ++p) {
        double v = 0.0;
        for (std::size_t k = 0; k < K; ++k) v += a[k * P + p] * r[k];
        out[c * P + p] = v;
      }
    }
  } else {
    const Tensor& field = spec.kind == SensorKind::SAR ? scene.sar : scene.lst;
    require(field.dim(0) == spec.channels, "render_sensor: " + spec.id + " channel count does not match its field");
    out = block_mean(field, f);
  }
  const double sigma = sigma_override >= 0.0 ? sigma_override : spec.noise_sigma;
  if (sigma > 0.0) {
    CounterRng rng = CounterRng::derive(noise_seed, Purpose::Noise, {id_hash(spec.id)});
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(out[i] + sigma * rng.normal(), 0.0, 1.0 + 5.0 * sigma);
  }
  return out;
}

// Per-pixel dominant material at `px` x `px` resolution, folded onto
// `classes` labels (material k -> k mod classes).
inline std::vector<int> dominant_labels(const LatentScene& scene, std::size_t px, std::size_t classes) {
  require(classes >= 2 && px > 0 && scene.px % px == 0, "dominant_labels: bad resolution or class count");
  const Tensor a = block_mean(scene.abundance, scene.px / px);
  const std::size_t K = scene.materials(), P = px * px;
  std::vector<int> out(P);
  for (std::size_t p = 0; p < P; ++p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (a[k * P + p] > a[best * P + p]) best = k;
    out[p] = static_cast<int>(best % classes);
  }
  return out;
}

}  // namespace msfm::synth
