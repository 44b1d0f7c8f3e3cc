#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "msfm/numerics/error.hpp"

namespace msfm::synth {

enum class SensorKind { HSI, MSI, SAR, LST };

inline const char* kind_name(SensorKind k) {
  switch (k) {
    case SensorKind::HSI: return "HSI";
    case SensorKind::MSI: return "MSI";
    case SensorKind::SAR: return "SAR";
    case SensorKind::LST: return "LST";
  }
  return "?";
}

enum class Scale { Paper, Desk };

// Wavelength interval [lo, hi] in nm with no retained bands.
using Gap = std::pair<double, double>;

struct BandInventory {
  std::vector<double> centers;
  std::vector<Gap> gaps;
};

struct SensorSpec {
  std::string id;
  SensorKind kind = SensorKind::MSI;
  std::vector<double> band_centers;  // empty for SAR and LST
  std::vector<Gap> gaps;
  std::size_t channels = 0;
  double gsd = 0.0;
  std::size_t crop_px = 0;
  std::size_t patch_stride = 1;
  std::size_t patch_kernel = 1;
  std::size_t group_count = 0;  // HSI only
  double noise_sigma = 0.0;

  bool optical() const { return kind == SensorKind::HSI || kind == SensorKind::MSI; }
  std::size_t grid() const { return crop_px / patch_stride; }
  double footprint() const { return gsd * static_cast<double>(crop_px); }
  BandInventory inventory() const { return {band_centers, gaps}; }
};

using Suite = std::vector<SensorSpec>;

// Atmospheric water absorption windows excluded from every HSI inventory.
inline const std::vector<Gap>& absorption_gaps() {
  static const std::vector<Gap> g{{1340.0, 1460.0}, {1800.0, 1960.0}};
  return g;
}

// `count` band centres spread over [lo, hi] minus `gaps`, allocated to the
// retained segments in proportion to their width (largest remainder) and
// placed at cell midpoints inside each segment.
inline std::vector<double> spread_bands(double lo, double hi, std::size_t count, const std::vector<Gap>& gaps) {
  std::vector<std::pair<double, double>> segs;
  double a = lo;
  for (const auto& [g0, g1] : gaps) {
    if (g1 <= lo || g0 >= hi) continue;
    if (g0 > a) segs.emplace_back(a, g0);
    a = std::max(a, g1);
  }
  if (a < hi) segs.emplace_back(a, hi);
  double total = 0.0;
  for (const auto& [s0, s1] : segs) total += s1 - s0;
  std::vector<std::size_t> n(segs.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const double exact = static_cast<double>(count) * (segs[i].second - segs[i].first) / total;
    n[i] = static_cast<std::size_t>(std::floor(exact));
    used += n[i];
    rem.emplace_back(exact - static_cast<double>(n[i]), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  for (std::size_t i = 0; used < count; ++i, ++used) ++n[rem[i % rem.size()].second];
  std::vector<double> out;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const double w = (segs[i].second - segs[i].first) / static_cast<double>(n[i]);
    for (std::size_t j = 0; j < n[i]; ++j) out.push_back(segs[i].first + (static_cast<double>(j) + 0.5) * w);
  }
  return out;
}

namespace detail {

inline SensorSpec optical(std::string id, SensorKind kind, std::vector<double> centers, std::vector<Gap> gaps, double gsd,
                          std::size_t stride, std::size_t kernel, std::size_t groups, double sigma, std::size_t grid) {
  SensorSpec s;
  s.id = std::move(id);
  s.kind = kind;
  s.band_centers = std::move(centers);
  s.gaps = std::move(gaps);
  s.channels = s.band_centers.size();
  s.gsd = gsd;
  s.patch_stride = stride;
  s.patch_kernel = kernel;
  s.crop_px = grid * stride;
  s.group_count = groups;
  s.noise_sigma = sigma;
  return s;
}

inline SensorSpec field(std::string id, SensorKind kind, std::size_t channels, double gsd, std::size_t stride, std::size_t kernel,
                        double sigma, std::size_t grid) {
  SensorSpec s;
  s.id = std::move(id);
  s.kind = kind;
  s.channels = channels;
  s.gsd = gsd;
  s.patch_stride = stride;
  s.patch_kernel = kernel;
  s.crop_px = grid * stride;
  s.noise_sigma = sigma;
  return s;
}

}  // namespace detail

// Sentinel-2 10 m/20 m bands (B2-B8A, B11, B12) and Landsat OLI bands 1-7.
inline std::vector<double> s2_centers() { return {490, 560, 665, 705, 740, 783, 842, 865, 1610, 2190}; }
inline std::vector<double> oli_centers() { return {443, 482, 561, 655, 865, 1609, 2201}; }

// The seven sensors in canonical order: EnMAP, DESIS, EMIT, S2, S1, OLI, LST.
// `grid` is the common token-grid side; the paper scale fixes it at 64. Desk
// scale keeps every stride, kernel and GSD, so crops shrink with the grid, and
// divides the hyperspectral band and group counts by four.
inline Suite make_sensor_suite(Scale scale, std::size_t grid = 0) {
  const bool paper = scale == Scale::Paper;
  if (grid == 0) grid = paper ? 64 : 8;
  require(grid >= 2 && grid % 4 == 0, "sensor suite: grid side must be a positive multiple of 4");
  auto bands = [&](std::size_t n) { return paper ? n : static_cast<std::size_t>(std::lround(static_cast<double>(n) / 4.0)); };
  auto groups = [&](std::size_t g) { return paper ? g : static_cast<std::size_t>(std::lround(static_cast<double>(g) / 4.0)); };
  const auto& gaps = absorption_gaps();
  Suite s;
  s.push_back(detail::optical("enmap", SensorKind::HSI, spread_bands(420, 2450, bands(202), gaps), gaps, 30, 2, 3, groups(15),
                              0.01, grid));
  s.push_back(detail::optical("desis", SensorKind::HSI, spread_bands(402, 1000, bands(215), {}), {}, 30, 2, 3, groups(10), 0.01,
                              grid));
  s.push_back(detail::optical("emit", SensorKind::HSI, spread_bands(380, 2500, bands(244), gaps), gaps, 60, 1, 1, groups(15),
                              0.01, grid));
  s.push_back(detail::optical("s2", SensorKind::MSI, s2_centers(), {}, 10, 6, 7, 0, 0.005, grid));
  s.push_back(detail::field("s1", SensorKind::SAR, 2, 10, 6, 7, 0.02, grid));
  s.push_back(detail::optical("oli", SensorKind::MSI, oli_centers(), {}, 30, 2, 3, 0, 0.005, grid));
  s.push_back(detail::field("lst", SensorKind::LST, 1, 30, 2, 3, 0.01, grid));
  return s;
}

inline const SensorSpec& find_sensor(const Suite& suite, const std::string& id) {
  for (const auto& s : suite)
    if (s.id == id) return s;
  throw ContractViolation("unknown sensor '" + id + "'");
}

inline std::size_t sensor_index(const Suite& suite, const std::string& id) {
  for (std::size_t i = 0; i < suite.size(); ++i)
    if (suite[i].id == id) return i;
  throw ContractViolation("unknown sensor '" + id + "'");
}

// Checks the per-spec and cross-suite invariants; throws on the first breach.
inline void validate_suite(const Suite& suite) {
  require(!suite.empty(), "sensor suite is empty");
  const std::size_t grid = suite[0].grid();
  const double footprint = suite[0].footprint();
  for (const auto& s : suite) {
    require(s.crop_px > 0 && s.patch_stride > 0 && s.crop_px % s.patch_stride == 0,
            s.id + ": crop " + std::to_string(s.crop_px) + " not divisible by stride " + std::to_string(s.patch_stride));
    require(s.grid() == grid, s.id + ": token grid differs from the rest of the suite");
    require(std::abs(s.footprint() - footprint) < 1e-9, s.id + ": footprint differs from the rest of the suite");
    require(s.patch_kernel % 2 == 1, s.id + ": patch kernel must be odd");
    require(s.channels > 0, s.id + ": no channels");
    if (s.optical()) require(s.channels == s.band_centers.size(), s.id + ": channel count differs from band inventory");
    for (std::size_t i = 1; i < s.band_centers.size(); ++i)
      require(s.band_centers[i] > s.band_centers[i - 1], s.id + ": band centres not strictly increasing");
    for (double c : s.band_centers)
      for (const auto& [g0, g1] : s.gaps) require(c < g0 || c > g1, s.id + ": band centre inside an absorption gap");
    if (s.kind == SensorKind::HSI)
      require(s.group_count >= 1 && s.group_count <= s.channels, s.id + ": group count out of range");
    else
      require(s.group_count == 0, s.id + ": group count set on a non-hyperspectral sensor");
  }
}

}  // namespace msfm::synth
