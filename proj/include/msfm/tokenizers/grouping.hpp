#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "msfm/numerics/error.hpp"
#include "msfm/synth/sensors.hpp"

namespace msfm::tok {

// Half-open band index range [begin, end).
using Span = std::pair<std::size_t, std::size_t>;

struct SpectralGrouping {
  std::vector<Span> spans;

  std::size_t size() const { return spans.size(); }
  std::size_t bands() const { return spans.empty() ? 0 : spans.back().second; }
  std::size_t min_size() const {
    std::size_t m = ~std::size_t{0};
    for (auto [b, e] : spans) m = std::min(m, e - b);
    return m;
  }
  std::size_t max_size() const {
    std::size_t m = 0;
    for (auto [b, e] : spans) m = std::max(m, e - b);
    return m;
  }
};

// Maximal index runs of the inventory not interrupted by an absorption gap.
inline std::vector<Span> gap_segments(const synth::BandInventory& inv) {
  std::vector<Span> segs;
  const auto& c = inv.centers;
  std::size_t start = 0;
  for (std::size_t i = 0; i + 1 < c.size(); ++i) {
    bool split = false;
    for (const auto& [g0, g1] : inv.gaps) split = split || (g0 < c[i + 1] && g1 > c[i]);
    if (split) {
      segs.emplace_back(start, i + 1);
      start = i + 1;
    }
  }
  if (!c.empty()) segs.emplace_back(start, c.size());
  return segs;
}

// Splits [b, e) into `g` contiguous spans whose sizes differ by at most one,
// larger spans first.
inline void split_even(std::size_t b, std::size_t e, std::size_t g, std::vector<Span>& out) {
  const std::size_t n = e - b, q = n / g, r = n % g;
  for (std::size_t i = 0; i < g; ++i) {
    const std::size_t len = q + (i < r ? 1 : 0);
    out.emplace_back(b, b + len);
    b += len;
  }
}

// Contiguous spectral groups that never straddle an absorption gap. Groups are
// allocated to gap-delimited segments in proportion to segment length (each
// segment gets at least one, largest remainder breaks the rest, longer
// segments win ties); inside a segment sizes differ by at most one. When there
// are fewer groups than segments the gaps cannot all be respected and the
// whole inventory is split evenly instead.
inline SpectralGrouping partition_bands(const synth::BandInventory& inv, std::size_t G) {
  const std::size_t n = inv.centers.size();
  require(G >= 1 && G <= n, "partition_bands: " + std::to_string(G) + " groups over " + std::to_string(n) + " bands");
  SpectralGrouping out;
  const auto segs = gap_segments(inv);
  if (G < segs.size()) {
    split_even(0, n, G, out.spans);
    return out;
  }
  const std::size_t S = segs.size();
  std::vector<std::size_t> alloc(S);
  std::vector<double> exact(S);
  std::size_t used = 0;
  for (std::size_t i = 0; i < S; ++i) {
    const std::size_t len = segs[i].second - segs[i].first;
    exact[i] = static_cast<double>(G) * static_cast<double>(len) / static_cast<double>(n);
    alloc[i] = std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(exact[i])), 1, len);
    used += alloc[i];
  }
  auto len_of = [&](std::size_t i) { return segs[i].second - segs[i].first; };
  auto better = [&](std::size_t a, std::size_t b, bool grow) {
    const double ra = exact[a] - static_cast<double>(alloc[a]), rb = exact[b] - static_cast<double>(alloc[b]);
    if (ra != rb) return grow ? ra > rb : ra < rb;
    return grow ? len_of(a) > len_of(b) : len_of(a) < len_of(b);
  };
  while (used < G) {
    std::size_t best = S;
    for (std::size_t i = 0; i < S; ++i)
      if (alloc[i] < len_of(i) && (best == S || better(i, best, true))) best = i;
    ++alloc[best];
    ++used;
  }
  while (used > G) {
    std::size_t best = S;
    for (std::size_t i = 0; i < S; ++i)
      if (alloc[i] > 1 && (best == S || better(i, best, false))) best = i;
    --alloc[best];
    --used;
  }
  for (std::size_t i = 0; i < S; ++i) split_even(segs[i].first, segs[i].second, alloc[i], out.spans);
  return out;
}

}  // namespace msfm::tok
