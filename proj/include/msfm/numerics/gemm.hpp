#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

namespace msfm::kernels {

// C (M x N, row-major) = [C +] op(A) * op(B).
//   trans_a == false: A is M x K;  true: A is stored K x M.
//   trans_b == false: B is K x N;  true: B is stored N x K.
// Single-threaded. Each output element is accumulated in the same k order
// regardless of matrix size, so results are reproducible bit for bit.
void gemm(bool trans_a, bool trans_b, std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
          double* C, bool accumulate);

namespace detail {

using v8 = double __attribute__((vector_size(64)));

constexpr std::size_t kMR = 8;
constexpr std::size_t kNR = 16;
constexpr std::size_t kKC = 256;
constexpr std::size_t kMC = 128;

inline double a_elem(bool trans_a, const double* A, std::size_t M, std::size_t K, std::size_t i, std::size_t k) {
  return trans_a ? A[k * M + i] : A[i * K + k];
}
inline double b_elem(bool trans_b, const double* B, std::size_t N, std::size_t K, std::size_t k, std::size_t j) {
  return trans_b ? B[j * K + k] : B[k * N + j];
}

// 8 x 16 register tile over a packed A quad-block (kc x 8) and packed B panel (kc x 16).
// The project builds with -ffp-contract=off; this loop alone opts back in so
// the tile accumulates with fused multiply-adds.
__attribute__((optimize("fp-contract=fast"))) inline void micro_kernel(std::size_t kc, const double* ap, const double* bp, double* tile) {
  v8 c[kMR][2] = {};
  for (std::size_t k = 0; k < kc; ++k) {
    v8 b0, b1;
    std::memcpy(&b0, bp + k * kNR, sizeof(v8));
    std::memcpy(&b1, bp + k * kNR + 8, sizeof(v8));
    const double* a = ap + k * kMR;
#pragma GCC unroll 8
    for (std::size_t r = 0; r < kMR; ++r) {
      c[r][0] += a[r] * b0;
      c[r][1] += a[r] * b1;
    }
  }
#pragma GCC unroll 8
  for (std::size_t r = 0; r < kMR; ++r) {
    std::memcpy(tile + r * kNR, &c[r][0], sizeof(v8));
    std::memcpy(tile + r * kNR + 8, &c[r][1], sizeof(v8));
  }
}

inline void gemm_small(bool trans_a, bool trans_b, std::size_t M, std::size_t N, std::size_t K, const double* A,
                       const double* B, double* C) {
  for (std::size_t i = 0; i < M; ++i) {
    double* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double a = a_elem(trans_a, A, M, K, i, k);
      if (!trans_b) {
        const double* b = B + k * N;
        for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
      } else {
        for (std::size_t j = 0; j < N; ++j) c[j] += a * B[j * K + k];
      }
    }
  }
}

}  // namespace detail

inline void gemm(bool trans_a, bool trans_b, std::size_t M, std::size_t N, std::size_t K, const double* A,
                 const double* B, double* C, bool accumulate) {
  using namespace detail;
  if (!accumulate) std::fill(C, C + M * N, 0.0);
  if (M == 0 || N == 0 || K == 0) return;
  if (M * N * K <= 8192 || M < kMR / 2 || N < kNR / 2) {
    gemm_small(trans_a, trans_b, M, N, K, A, B, C);
    return;
  }
  const std::size_t n_panels = (N + kNR - 1) / kNR;
  thread_local std::vector<double> bpack, apack;
  bpack.resize(n_panels * kKC * kNR);
  apack.resize(kMC * kKC);
  double tile[kMR * kNR];

  for (std::size_t k0 = 0; k0 < K; k0 += kKC) {
    const std::size_t kc = std::min(kKC, K - k0);
    for (std::size_t p = 0; p < n_panels; ++p) {
      double* dst = bpack.data() + p * kKC * kNR;
      const std::size_t j0 = p * kNR;
      const std::size_t nc = std::min(kNR, N - j0);
      for (std::size_t k = 0; k < kc; ++k) {
        for (std::size_t j = 0; j < nc; ++j) dst[k * kNR + j] = b_elem(trans_b, B, N, K, k0 + k, j0 + j);
        for (std::size_t j = nc; j < kNR; ++j) dst[k * kNR + j] = 0.0;
      }
    }
    for (std::size_t i0 = 0; i0 < M; i0 += kMC) {
      const std::size_t mc = std::min(kMC, M - i0);
      const std::size_t n_quads = (mc + kMR - 1) / kMR;
      for (std::size_t q = 0; q < n_quads; ++q) {
        double* dst = apack.data() + q * kKC * kMR;
        for (std::size_t k = 0; k < kc; ++k) {
          for (std::size_t r = 0; r < kMR; ++r) {
            const std::size_t i = q * kMR + r;
            dst[k * kMR + r] = i < mc ? a_elem(trans_a, A, M, K, i0 + i, k0 + k) : 0.0;
          }
        }
      }
      for (std::size_t p = 0; p < n_panels; ++p) {
        const std::size_t j0 = p * kNR;
        const std::size_t nc = std::min(kNR, N - j0);
        for (std::size_t q = 0; q < n_quads; ++q) {
          micro_kernel(kc, apack.data() + q * kKC * kMR, bpack.data() + p * kKC * kNR, tile);
          const std::size_t rows = std::min(kMR, mc - q * kMR);
          for (std::size_t r = 0; r < rows; ++r) {
            double* c = C + (i0 + q * kMR + r) * N + j0;
            const double* t = tile + r * kNR;
            for (std::size_t j = 0; j < nc; ++j) c[j] += t[j];
          }
        }
      }
    }
  }
}

}  // namespace msfm::kernels
