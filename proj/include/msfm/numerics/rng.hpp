#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace msfm {

// Independent random streams, one per concern, so any subsystem can be
// replayed without touching the others.
enum class Purpose : std::uint64_t {
  Init = 1,
  Augment = 2,
  Sampling = 3,
  Scene = 4,
  Noise = 5,
  SigReg = 6,
  Probe = 7,
  Corpus = 8,
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Philox4x32-10 block function (Salmon et al., SC'11).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

}  // namespace detail

// Counter-based generator: output i of stream (key, stream) is a pure function
// of (key, stream, i). The whole state is the triple, which makes
// checkpointing and replay trivial.
class CounterRng {
 public:
  CounterRng(std::uint64_t key, std::uint64_t stream, std::uint64_t counter = 0)
      : key_(key), stream_(stream), counter_(counter) {}

  static CounterRng derive(std::uint64_t seed, Purpose purpose, std::initializer_list<std::uint64_t> tags = {}) {
    std::uint64_t s = detail::splitmix64(static_cast<std::uint64_t>(purpose) * 0x100000001B3ull);
    for (auto t : tags) s = detail::splitmix64(s ^ detail::splitmix64(t + 0x632BE59BD9B4E019ull));
    return CounterRng(seed, s);
  }

  CounterRng fork(std::uint64_t tag) const { return CounterRng(key_, detail::splitmix64(stream_ ^ detail::splitmix64(tag)), 0); }

  std::uint64_t next_u64() {
    const std::uint64_t block = counter_ >> 1;
    const auto out = detail::philox4x32(
        {static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32), static_cast<std::uint32_t>(stream_),
         static_cast<std::uint32_t>(stream_ >> 32)},
        {static_cast<std::uint32_t>(key_), static_cast<std::uint32_t>(key_ >> 32)});
    const bool hi = counter_ & 1;
    ++counter_;
    return hi ? (std::uint64_t{out[3]} << 32 | out[2]) : (std::uint64_t{out[1]} << 32 | out[0]);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller (cosine branch only, so the state stays a
  // bare counter).
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  // Normal truncated to [-2 sigma, 2 sigma].
  double trunc_normal(double sigma) {
    double z;
    do {
      z = normal();
    } while (std::abs(z) > 2.0);
    return sigma * z;
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t stream_;
  std::uint64_t counter_;
};

// Fisher-Yates shuffle driven by a CounterRng (std::shuffle's algorithm is
// implementation-defined).
template <typename Vec>
void shuffle_in_place(Vec& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace msfm
