#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "msfm/numerics/autograd.hpp"
#include "msfm/numerics/gemm.hpp"
#include "msfm/numerics/tensor.hpp"

// Differentiable primitives. Shape rules:
//   binary ops      the smaller operand's shape must be a suffix of the larger's
//   matmul/linear   (..., K) x (K, N) -> (..., N)
//   bmm             (B, M, K) x (B, K, N) -> (B, M, N)  [or (B, N, K) with trans_b]
//   conv2d_hwc      (H, W, C) * (k*k*C, O) -> (Ho, Wo, O)
//   max_pool2x2     (..., H, W, C) -> (..., H/2, W/2, C)
namespace msfm::ops {

namespace detail {

using TensorPtr = std::shared_ptr<const Tensor>;

inline TensorPtr val(const Var& v) { return v.node()->value; }

inline bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// out = permutation of `src` such that out.shape[i] = src.shape[perm[i]].
inline void permute_copy(const double* src, const Shape& src_shape, const std::vector<std::size_t>& perm, double* dst) {
  const std::size_t r = src_shape.size();
  if (r == 0) {
    dst[0] = src[0];
    return;
  }
  const auto sst = strides_of(src_shape);
  Shape oshape(r);
  std::vector<std::size_t> ostride_src(r);
  for (std::size_t i = 0; i < r; ++i) {
    oshape[i] = src_shape[perm[i]];
    ostride_src[i] = sst[perm[i]];
  }
  const std::size_t inner = oshape[r - 1];
  const std::size_t inner_stride = ostride_src[r - 1];
  const std::size_t total = shape_numel(oshape);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src_off = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    if (inner_stride == 1) {
      std::copy(src + src_off, src + src_off + inner, dst + o);
    } else {
      for (std::size_t j = 0; j < inner; ++j) dst[o + j] = src[src_off + j * inner_stride];
    }
    for (std::size_t d = r - 1; d-- > 0;) {
      src_off += ostride_src[d];
      if (++idx[d] < oshape[d]) break;
      src_off -= ostride_src[d] * oshape[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { Add, Sub, Mul };

inline Var binary(std::string_view name, const Var& a, const Var& b, BinaryKind kind) {
  const bool b_small = is_suffix(a.shape(), b.shape());
  const bool a_small = !b_small && is_suffix(b.shape(), a.shape());
  require(b_small || a_small, std::string(name) + ": incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const Shape out_shape = b_small ? a.shape() : b.shape();
  const std::size_t n = shape_numel(out_shape);
  const std::size_t inner = b_small ? b.numel() : a.numel();
  const std::size_t outer = n / inner;
  // Element i = o * inner + j reads the full operand at i and the broadcast one at j.
  auto ia = [=](std::size_t i, std::size_t j) { return b_small ? i : j; };
  auto ib = [=](std::size_t i, std::size_t j) { return b_small ? j : i; };
  Tensor out(out_shape);
  const double* pa = a.value().ptr();
  const double* pb = b.value().ptr();
  double* po = out.ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t i = o * inner + j;
      const double x = pa[ia(i, j)], y = pb[ib(i, j)];
      po[i] = kind == BinaryKind::Add ? x + y : kind == BinaryKind::Sub ? x - y : x * y;
    }
  }
  auto va = val(a), vb = val(b);
  return make_op(name, std::move(out), {a, b}, [=](const Tensor& g, std::span<Tensor* const> gin) {
    const double* pg = g.ptr();
    if (Tensor* ga = gin[0]) {
      double* d = ga->ptr();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < inner; ++j) {
          const std::size_t i = o * inner + j;
          d[ia(i, j)] += kind == BinaryKind::Mul ? pg[i] * (*vb)[ib(i, j)] : pg[i];
        }
      }
    }
    if (Tensor* gb = gin[1]) {
      double* d = gb->ptr();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < inner; ++j) {
          const std::size_t i = o * inner + j;
          const double gi = kind == BinaryKind::Mul ? pg[i] * (*va)[ia(i, j)] : pg[i];
          d[ib(i, j)] += kind == BinaryKind::Sub ? -gi : gi;
        }
      }
    }
  });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) { return detail::binary("add", a, b, detail::BinaryKind::Add); }
inline Var sub(const Var& a, const Var& b) { return detail::binary("sub", a, b, detail::BinaryKind::Sub); }
inline Var mul(const Var& a, const Var& b) { return detail::binary("mul", a, b, detail::BinaryKind::Mul); }

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= s;
  return make_op("scale", std::move(out), {a}, [s](const Tensor& g, std::span<Tensor* const> gin) {
    double* d = gin[0]->ptr();
    for (std::size_t i = 0; i < g.numel(); ++i) d[i] += s * g[i];
  });
}

inline Var square(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= v;
  auto va = detail::val(a);
  return make_op("square", std::move(out), {a}, [va](const Tensor& g, std::span<Tensor* const> gin) {
    double* d = gin[0]->ptr();
    for (std::size_t i = 0; i < g.numel(); ++i) d[i] += 2.0 * (*va)[i] * g[i];
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make_op("sum", Tensor::scalar(s), {a}, [](const Tensor& g, std::span<Tensor* const> gin) {
    const double gv = g[0];
    for (auto& d : gin[0]->storage()) d += gv;
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

// Sum of squares (squared L2 norm) of all elements.
inline Var sq_norm(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  auto va = detail::val(a);
  return make_op("sq_norm", Tensor::scalar(s), {a}, [va](const Tensor& g, std::span<Tensor* const> gin) {
    double* d = gin[0]->ptr();
    for (std::size_t i = 0; i < va->numel(); ++i) d[i] += 2.0 * (*va)[i] * g[0];
  });
}

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_op("reshape", std::move(out), {a}, [](const Tensor& g, std::span<Tensor* const> gin) {
    double* d = gin[0]->ptr();
    for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i];
  });
}

inline Var permute(const Var& a, std::vector<std::size_t> perm) {
  const Shape& s = a.shape();
  require(perm.size() == s.size(), "permute: rank mismatch");
  Shape os(s.size());
  std::vector<std::size_t> inv(s.size());
  std::vector<bool> used(s.size(), false);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    require(perm[i] < s.size() && !used[perm[i]], "permute: invalid permutation");
    used[perm[i]] = true;
    os[i] = s[perm[i]];
    inv[perm[i]] = i;
  }
  Tensor out(os);
  detail::permute_copy(a.value().ptr(), s, perm, out.ptr());
  return make_op("permute", std::move(out), {a}, [inv, os](const Tensor& g, std::span<Tensor* const> gin) {
    Tensor back(gin[0]->shape());
    detail::permute_copy(g.ptr(), os, inv, back.ptr());
    double* d = gin[0]->ptr();
    for (std::size_t i = 0; i < back.numel(); ++i) d[i] += back[i];
  });
}

// (..., K) x (K, N) -> (..., N), optional bias (N).
inline Var linear(const Var& x, const Var& w, const Var& b = Var()) {
  require(w.rank() == 2, "linear: weight must be rank 2, got " + shape_str(w.shape()));
  require(x.rank() >= 1 && x.shape().back() == w.dim(0),
          "linear: shape mismatch " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  const std::size_t K = w.dim(0), N = w.dim(1), M = x.numel() / K;
  Shape os = x.shape();
  os.back() = N;
  Tensor out(os);
  kernels::gemm(false, false, M, N, K, x.value().ptr(), w.value().ptr(), out.ptr(), false);
  const bool has_bias = b.defined();
  if (has_bias) {
    require(b.shape() == Shape{N}, "linear: bias shape " + shape_str(b.shape()) + " expected (" + std::to_string(N) + ")");
    const double* pb = b.value().ptr();
    double* po = out.ptr();
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) po[i * N + j] += pb[j];
  }
  auto vx = detail::val(x), vw = detail::val(w);
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_op(has_bias ? "linear" : "matmul", std::move(out), inputs,
                 [=](const Tensor& g, std::span<Tensor* const> gin) {
                   if (gin[0]) kernels::gemm(false, true, M, K, N, g.ptr(), vw->ptr(), gin[0]->ptr(), true);
                   if (gin[1]) kernels::gemm(true, false, K, N, M, vx->ptr(), g.ptr(), gin[1]->ptr(), true);
                   if (has_bias && gin[2]) {
                     double* d = gin[2]->ptr();
                     for (std::size_t i = 0; i < M; ++i)
                       for (std::size_t j = 0; j < N; ++j) d[j] += g[i * N + j];
                   }
                 });
}

inline Var matmul(const Var& x, const Var& w) { return linear(x, w); }

// Batched matmul: (B, M, K) x (B, K, N) -> (B, M, N); with trans_b the right
// operand is stored (B, N, K).
inline Var bmm(const Var& a, const Var& b, bool trans_b = false) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0), "bmm: expected matching rank-3 operands, got " +
                                                                        shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t B = a.dim(0), M = a.dim(1), K = a.dim(2);
  require((trans_b ? b.dim(2) : b.dim(1)) == K, "bmm: inner extent mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t N = trans_b ? b.dim(1) : b.dim(2);
  Tensor out(Shape{B, M, N});
  for (std::size_t i = 0; i < B; ++i)
    kernels::gemm(false, trans_b, M, N, K, a.value().ptr() + i * M * K, b.value().ptr() + i * K * N, out.ptr() + i * M * N, false);
  auto va = detail::val(a), vb = detail::val(b);
  return make_op("bmm", std::move(out), {a, b}, [=](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < B; ++i) {
      const double* gi = g.ptr() + i * M * N;
      const double* ai = va->ptr() + i * M * K;
      const double* bi = vb->ptr() + i * K * N;
      if (gin[0]) kernels::gemm(false, !trans_b, M, K, N, gi, bi, gin[0]->ptr() + i * M * K, true);
      if (gin[1]) {
        if (!trans_b)
          kernels::gemm(true, false, K, N, M, ai, gi, gin[1]->ptr() + i * K * N, true);
        else
          kernels::gemm(true, false, N, K, M, gi, ai, gin[1]->ptr() + i * K * N, true);
      }
    }
  });
}

inline Var softmax_last(const Var& a) {
  const std::size_t n = a.shape().empty() ? 1 : a.shape().back();
  const std::size_t rows = a.numel() / n;
  Tensor out(a.shape());
  const double* x = a.value().ptr();
  double* y = out.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * n;
    double* yr = y + r * n;
    const double m = *std::max_element(xr, xr + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (yr[j] = std::exp(xr[j] - m));
    for (std::size_t j = 0; j < n; ++j) yr[j] /= s;
  }
  auto keep = std::make_shared<const Tensor>(out);
  return make_op("softmax", std::move(out), {a}, [keep, n, rows](const Tensor& g, std::span<Tensor* const> gin) {
    double* d = gin[0]->ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = keep->ptr() + r * n;
      const double* gr = g.ptr() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < n; ++j) d[r * n + j] += yr[j] * (gr[j] - dot);
    }
  });
}

// Normalizes over the last axis; gamma/beta (last-axis sized) are optional.
inline Var layer_norm(const Var& x, const Var& gamma = Var(), const Var& beta = Var(), double eps = 1e-6) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const bool affine = gamma.defined();
  if (affine) require(gamma.shape() == Shape{n} && beta.shape() == Shape{n}, "layer_norm: affine shape mismatch");
  Tensor xhat(x.shape());
  std::vector<double> rstd(rows);
  const double* px = x.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = px + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) xhat[r * n + j] = (xr[j] - mu) * rstd[r];
  }
  Tensor out = xhat;
  if (affine) {
    const double* g = gamma.value().ptr();
    const double* b = beta.value().ptr();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xhat[r * n + j] * g[j] + b[j];
  }
  auto keep = std::make_shared<const Tensor>(std::move(xhat));
  auto vg = affine ? detail::val(gamma) : nullptr;
  std::vector<Var> inputs{x};
  if (affine) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  return make_op("layer_norm", std::move(out), inputs,
                 [=, rstd = std::move(rstd)](const Tensor& g, std::span<Tensor* const> gin) {
                   std::vector<double> gx(n);
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* gr = g.ptr() + r * n;
                     const double* xh = keep->ptr() + r * n;
                     if (affine) {
                       if (gin[1])
                         for (std::size_t j = 0; j < n; ++j) (*gin[1])[j] += gr[j] * xh[j];
                       if (gin[2])
                         for (std::size_t j = 0; j < n; ++j) (*gin[2])[j] += gr[j];
                     }
                     if (!gin[0]) continue;
                     double m1 = 0.0, m2 = 0.0;
                     for (std::size_t j = 0; j < n; ++j) {
                       gx[j] = affine ? gr[j] * (*vg)[j] : gr[j];
                       m1 += gx[j];
                       m2 += gx[j] * xh[j];
                     }
                     m1 /= static_cast<double>(n);
                     m2 /= static_cast<double>(n);
                     double* d = gin[0]->ptr() + r * n;
                     for (std::size_t j = 0; j < n; ++j) d[j] += rstd[r] * (gx[j] - m1 - xh[j] * m2);
                   }
                 });
}

// Exact (erf) GELU.
inline Var gelu(const Var& a) {
  Tensor out(a.shape());
  const double* x = a.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
  auto va = detail::val(a);
  return make_op("gelu", std::move(out), {a}, [va](const Tensor& g, std::span<Tensor* const> gin) {
    double* d = gin[0]->ptr();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double xv = (*va)[i];
      const double cdf = 0.5 * (1.0 + std::erf(xv * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv * xv);
      d[i] += g[i] * (cdf + xv * pdf);
    }
  });
}

namespace detail {

struct ConvGeom {
  std::size_t H, W, C, k, stride, pad, Ho, Wo;
};

inline void im2col(const double* x, const ConvGeom& c, double* cols) {
  const std::size_t kk = c.k * c.k * c.C;
  for (std::size_t oy = 0; oy < c.Ho; ++oy) {
    for (std::size_t ox = 0; ox < c.Wo; ++ox) {
      double* row = cols + (oy * c.Wo + ox) * kk;
      for (std::size_t ky = 0; ky < c.k; ++ky) {
        const long iy = static_cast<long>(oy * c.stride + ky) - static_cast<long>(c.pad);
        for (std::size_t kx = 0; kx < c.k; ++kx) {
          const long ix = static_cast<long>(ox * c.stride + kx) - static_cast<long>(c.pad);
          double* dst = row + (ky * c.k + kx) * c.C;
          if (iy < 0 || ix < 0 || iy >= static_cast<long>(c.H) || ix >= static_cast<long>(c.W)) {
            std::fill(dst, dst + c.C, 0.0);
          } else {
            const double* src = x + (static_cast<std::size_t>(iy) * c.W + static_cast<std::size_t>(ix)) * c.C;
            std::copy(src, src + c.C, dst);
          }
        }
      }
    }
  }
}

inline void col2im_add(const double* cols, const ConvGeom& c, double* x) {
  const std::size_t kk = c.k * c.k * c.C;
  for (std::size_t oy = 0; oy < c.Ho; ++oy) {
    for (std::size_t ox = 0; ox < c.Wo; ++ox) {
      const double* row = cols + (oy * c.Wo + ox) * kk;
      for (std::size_t ky = 0; ky < c.k; ++ky) {
        const long iy = static_cast<long>(oy * c.stride + ky) - static_cast<long>(c.pad);
        if (iy < 0 || iy >= static_cast<long>(c.H)) continue;
        for (std::size_t kx = 0; kx < c.k; ++kx) {
          const long ix = static_cast<long>(ox * c.stride + kx) - static_cast<long>(c.pad);
          if (ix < 0 || ix >= static_cast<long>(c.W)) continue;
          const double* src = row + (ky * c.k + kx) * c.C;
          double* dst = x + (static_cast<std::size_t>(iy) * c.W + static_cast<std::size_t>(ix)) * c.C;
          for (std::size_t ch = 0; ch < c.C; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

}  // namespace detail

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  require(in + 2 * pad >= k, "conv: kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

// 2-D convolution on a channels-last map. Weight rows are ordered (ky, kx, c).
inline Var conv2d_hwc(const Var& x, const Var& w, const Var& b, std::size_t k, std::size_t stride, std::size_t pad) {
  require(x.rank() == 3, "conv2d: input must be (H, W, C), got " + shape_str(x.shape()));
  require(stride >= 1 && k >= 1, "conv2d: stride and kernel must be positive");
  detail::ConvGeom c{x.dim(0), x.dim(1), x.dim(2), k, stride, pad, 0, 0};
  c.Ho = conv_out_extent(c.H, k, stride, pad);
  c.Wo = conv_out_extent(c.W, k, stride, pad);
  const std::size_t kk = k * k * c.C;
  require(w.rank() == 2 && w.dim(0) == kk,
          "conv2d: weight " + shape_str(w.shape()) + " does not match kernel " + std::to_string(k) + " over " + std::to_string(c.C) + " channels");
  const std::size_t O = w.dim(1);
  const std::size_t P = c.Ho * c.Wo;
  std::vector<double> cols(P * kk);
  detail::im2col(x.value().ptr(), c, cols.data());
  Tensor out(Shape{c.Ho, c.Wo, O});
  kernels::gemm(false, false, P, O, kk, cols.data(), w.value().ptr(), out.ptr(), false);
  const bool has_bias = b.defined();
  if (has_bias) {
    require(b.shape() == Shape{O}, "conv2d: bias shape mismatch");
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t o = 0; o < O; ++o) out[p * O + o] += b.value()[o];
  }
  auto vx = detail::val(x), vw = detail::val(w);
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_op("conv2d", std::move(out), inputs, [=](const Tensor& g, std::span<Tensor* const> gin) {
    if (gin[1]) {
      std::vector<double> cl(P * kk);
      detail::im2col(vx->ptr(), c, cl.data());
      kernels::gemm(true, false, kk, O, P, cl.data(), g.ptr(), gin[1]->ptr(), true);
    }
    if (gin[0]) {
      std::vector<double> gcols(P * kk);
      kernels::gemm(false, true, P, kk, O, g.ptr(), vw->ptr(), gcols.data(), false);
      detail::col2im_add(gcols.data(), c, gin[0]->ptr());
    }
    if (has_bias && gin[2]) {
      double* d = gin[2]->ptr();
      for (std::size_t p = 0; p < P; ++p)
        for (std::size_t o = 0; o < O; ++o) d[o] += g[p * O + o];
    }
  });
}

// Edge-replicating pad of a channels-last map by `pad` cells on every side.
inline Var pad_edge_hwc(const Var& x, std::size_t pad) {
  require(x.rank() == 3, "pad_edge: input must be (H, W, C)");
  if (pad == 0) return x;
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2), Hp = H + 2 * pad, Wp = W + 2 * pad;
  auto src = [pad](std::size_t i, std::size_t n) { return std::min(n - 1, i < pad ? 0 : i - pad); };
  Tensor out(Shape{Hp, Wp, C});
  const double* px = x.value().ptr();
  for (std::size_t y = 0; y < Hp; ++y)
    for (std::size_t xx = 0; xx < Wp; ++xx)
      std::copy_n(px + (src(y, H) * W + src(xx, W)) * C, C, out.ptr() + (y * Wp + xx) * C);
  return make_op("pad_edge", std::move(out), {x}, [=](const Tensor& g, std::span<Tensor* const> gin) {
    double* d = gin[0]->ptr();
    for (std::size_t y = 0; y < Hp; ++y)
      for (std::size_t xx = 0; xx < Wp; ++xx) {
        double* dst = d + (src(y, H) * W + src(xx, W)) * C;
        const double* gs = g.ptr() + (y * Wp + xx) * C;
        for (std::size_t ch = 0; ch < C; ++ch) dst[ch] += gs[ch];
      }
  });
}

// 2x2 max pooling over the two axes preceding the channel axis. Ties go to
// the first element in row-major window order.
inline Var max_pool2x2(const Var& x) {
  const Shape& s = x.shape();
  require(s.size() >= 3, "max_pool2x2: need (..., H, W, C), got " + shape_str(s));
  const std::size_t r = s.size();
  const std::size_t H = s[r - 3], W = s[r - 2], C = s[r - 1];
  require(H % 2 == 0 && W % 2 == 0, "max_pool2x2: spatial extents must be even, got " + shape_str(s));
  const std::size_t outer = x.numel() / (H * W * C);
  Shape os = s;
  os[r - 3] = H / 2;
  os[r - 2] = W / 2;
  Tensor out(os);
  std::vector<std::size_t> arg(out.numel());
  const double* px = x.value().ptr();
  for (std::size_t b = 0; b < outer; ++b) {
    for (std::size_t oy = 0; oy < H / 2; ++oy) {
      for (std::size_t ox = 0; ox < W / 2; ++ox) {
        for (std::size_t ch = 0; ch < C; ++ch) {
          std::size_t best = 0;
          double bv = 0.0;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t i = ((b * H + 2 * oy + dy) * W + 2 * ox + dx) * C + ch;
              if ((dy == 0 && dx == 0) || px[i] > bv) {
                bv = px[i];
                best = i;
              }
            }
          }
          const std::size_t o = ((b * (H / 2) + oy) * (W / 2) + ox) * C + ch;
          out[o] = bv;
          arg[o] = best;
        }
      }
    }
  }
  return make_op("max_pool2x2", std::move(out), {x}, [arg = std::move(arg)](const Tensor& g, std::span<Tensor* const> gin) {
    double* d = gin[0]->ptr();
    for (std::size_t o = 0; o < g.numel(); ++o) d[arg[o]] += g[o];
  });
}

// Mean over one axis (the axis is removed).
inline Var mean_axis(const Var& x, std::size_t axis) {
  const Shape& s = x.shape();
  require(axis < s.size(), "mean_axis: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) os.push_back(s[i]);
  Tensor out(os);
  const double* px = x.value().ptr();
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += px[(o * n + j) * inner + i];
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] *= inv;
  }
  return make_op("mean_axis", std::move(out), {x}, [=](const Tensor& g, std::span<Tensor* const> gin) {
    double* d = gin[0]->ptr();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < inner; ++i) d[(o * n + j) * inner + i] += g[o * inner + i] * inv;
  });
}

// Sum over the last axis (the axis is removed).
inline Var sum_last(const Var& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  Shape os(x.shape().begin(), x.shape().end() - 1);
  Tensor out(os);
  const double* px = x.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += px[r * n + j];
    out[r] = s;
  }
  return make_op("sum_last", std::move(out), {x}, [n, rows](const Tensor& g, std::span<Tensor* const> gin) {
    double* d = gin[0]->ptr();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) d[r * n + j] += g[r];
  });
}

inline Var concat(const std::vector<Var>& xs, std::size_t axis) {
  require(!xs.empty(), "concat: empty input list");
  const Shape& s0 = xs[0].shape();
  require(axis < s0.size(), "concat: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    require(ok, "concat: shape " + shape_str(s) + " incompatible with " + shape_str(s0) + " on axis " + std::to_string(axis));
    widths.push_back(s[axis] * inner);
    total += s[axis];
  }
  Shape os = s0;
  os[axis] = total;
  Tensor out(os);
  const std::size_t row = total * inner;
  std::size_t off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double* src = xs[k].value().ptr();
    for (std::size_t o = 0; o < outer; ++o) std::copy(src + o * widths[k], src + (o + 1) * widths[k], out.ptr() + o * row + off);
    off += widths[k];
  }
  return make_op("concat", std::move(out), xs, [=](const Tensor& g, std::span<Tensor* const> gin) {
    std::size_t off2 = 0;
    for (std::size_t k = 0; k < gin.size(); ++k) {
      if (gin[k]) {
        double* d = gin[k]->ptr();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < widths[k]; ++i) d[o * widths[k] + i] += g[o * row + off2 + i];
      }
      off2 += widths[k];
    }
  });
}

// Elements [begin, end) along `axis`.
inline Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  require(axis < s.size() && begin < end && end <= s[axis],
          "slice: invalid range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " + std::to_string(axis) + " of " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis], w = (end - begin) * inner;
  Shape os = s;
  os[axis] = end - begin;
  Tensor out(os);
  const double* px = x.value().ptr();
  for (std::size_t o = 0; o < outer; ++o) std::copy(px + (o * n + begin) * inner, px + (o * n + begin) * inner + w, out.ptr() + o * w);
  return make_op("slice", std::move(out), {x}, [=](const Tensor& g, std::span<Tensor* const> gin) {
    double* d = gin[0]->ptr();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < w; ++i) d[(o * n + begin) * inner + i] += g[o * w + i];
  });
}

namespace detail {

struct LerpAxis {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w1;
};

// Half-pixel-centre bilinear sampling positions (align_corners = false).
inline LerpAxis lerp_axis(std::size_t in, std::size_t out) {
  LerpAxis a;
  a.i0.resize(out);
  a.i1.resize(out);
  a.w1.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    a.i0[o] = lo;
    a.i1[o] = std::min(lo + 1, in - 1);
    a.w1[o] = src - static_cast<double>(lo);
  }
  return a;
}

}  // namespace detail

// Bilinear resize of a channels-last map (H, W, C) -> (Ho, Wo, C).
inline Var resize_bilinear_hwc(const Var& x, std::size_t Ho, std::size_t Wo) {
  require(x.rank() == 3, "resize_bilinear: input must be (H, W, C)");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  auto ay = detail::lerp_axis(H, Ho), ax = detail::lerp_axis(W, Wo);
  Tensor out(Shape{Ho, Wo, C});
  const double* px = x.value().ptr();
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      const double wy = ay.w1[oy], wx = ax.w1[ox];
      const double* p00 = px + (ay.i0[oy] * W + ax.i0[ox]) * C;
      const double* p01 = px + (ay.i0[oy] * W + ax.i1[ox]) * C;
      const double* p10 = px + (ay.i1[oy] * W + ax.i0[ox]) * C;
      const double* p11 = px + (ay.i1[oy] * W + ax.i1[ox]) * C;
      double* o = out.ptr() + (oy * Wo + ox) * C;
      for (std::size_t ch = 0; ch < C; ++ch)
        o[ch] = (1 - wy) * ((1 - wx) * p00[ch] + wx * p01[ch]) + wy * ((1 - wx) * p10[ch] + wx * p11[ch]);
    }
  }
  return make_op("resize_bilinear", std::move(out), {x}, [=](const Tensor& g, std::span<Tensor* const> gin) {
    double* d = gin[0]->ptr();
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const double wy = ay.w1[oy], wx = ax.w1[ox];
        const double* go = g.ptr() + (oy * Wo + ox) * C;
        double* d00 = d + (ay.i0[oy] * W + ax.i0[ox]) * C;
        double* d01 = d + (ay.i0[oy] * W + ax.i1[ox]) * C;
        double* d10 = d + (ay.i1[oy] * W + ax.i0[ox]) * C;
        double* d11 = d + (ay.i1[oy] * W + ax.i1[ox]) * C;
        for (std::size_t ch = 0; ch < C; ++ch) {
          d00[ch] += (1 - wy) * (1 - wx) * go[ch];
          d01[ch] += (1 - wy) * wx * go[ch];
          d10[ch] += wy * (1 - wx) * go[ch];
          d11[ch] += wy * wx * go[ch];
        }
      }
    }
  });
}

// Mean softmax cross-entropy of logits (N, C) against integer labels.
inline Var cross_entropy(const Var& logits, std::span<const int> labels) {
  require(logits.rank() == 2 && logits.dim(0) == labels.size(), "cross_entropy: logits must be (N, C) with N labels");
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  auto probs = std::make_shared<Tensor>(logits.shape());
  std::vector<int> lab(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    require(lab[i] >= 0 && static_cast<std::size_t>(lab[i]) < C, "cross_entropy: label out of range");
    const double* x = logits.value().ptr() + i * C;
    const double m = *std::max_element(x, x + C);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += ((*probs)[i * C + c] = std::exp(x[c] - m));
    for (std::size_t c = 0; c < C; ++c) (*probs)[i * C + c] /= s;
    loss += -(x[lab[i]] - m - std::log(s));
  }
  loss /= static_cast<double>(N);
  return make_op("cross_entropy", Tensor::scalar(loss), {logits}, [=](const Tensor& g, std::span<Tensor* const> gin) {
    double* d = gin[0]->ptr();
    const double scale_ = g[0] / static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t c = 0; c < C; ++c)
        d[i * C + c] += scale_ * ((*probs)[i * C + c] - (static_cast<int>(c) == lab[i] ? 1.0 : 0.0));
  });
}

}  // namespace msfm::ops
