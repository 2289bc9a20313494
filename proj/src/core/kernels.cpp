#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <mutex>

#include <cblas.h>

extern "C" void openblas_set_num_threads(int);

namespace add::kern {

void init_blas_single_thread() {
  static std::once_flag flag;
  std::call_once(flag, [] { openblas_set_num_threads(1); });
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, real alpha, const real* a, int lda,
          const real* b, int ldb, real beta, real* c, int ldc) {
  init_blas_single_thread();
  if constexpr (sizeof(real) == sizeof(float)) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha,
                reinterpret_cast<const float*>(a), lda, reinterpret_cast<const float*>(b), ldb,
                beta, reinterpret_cast<float*>(c), ldc);
  } else {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha,
                reinterpret_cast<const double*>(a), lda, reinterpret_cast<const double*>(b), ldb,
                beta, reinterpret_cast<double*>(c), ldc);
  }
}

namespace {

// Eight-lane SIMD vector for the register-tile kernels below. GCC's and
// Clang's auto-vectorizers both leave multi-accumulator tiles scalar, so
// the lanes are spelled out with the vector extension; memcpy loads/stores
// keep it standard-layout.
using vlane = real __attribute__((vector_size(8 * sizeof(real))));
constexpr int kLanes = 8;

inline vlane vload(const real* p) {
  vlane v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

inline void vstore(real* p, vlane v) { std::memcpy(p, &v, sizeof(v)); }

}  // namespace

real dot(const real* a, const real* b, int n) {
  // Two independent accumulators break the FMA latency chain; the final
  // reduction order is fixed, so results are identical run to run.
  vlane acc0 = {}, acc1 = {};
  int i = 0;
  for (; i + 2 * kLanes <= n; i += 2 * kLanes) {
    acc0 += vload(a + i) * vload(b + i);
    acc1 += vload(a + i + kLanes) * vload(b + i + kLanes);
  }
  if (i + kLanes <= n) {
    acc0 += vload(a + i) * vload(b + i);
    i += kLanes;
  }
  real s = 0;
  for (int j = 0; j < kLanes; ++j) s += acc0[j] + acc1[j];
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void pad_copy(const real* x, int c, int h, int w, int pad, real* xp) {
  const int hp = h + 2 * pad, wp = w + 2 * pad;
  std::memset(xp, 0, sizeof(real) * static_cast<size_t>(c) * hp * wp);
  for (int ic = 0; ic < c; ++ic)
    for (int ih = 0; ih < h; ++ih)
      std::memcpy(xp + (static_cast<size_t>(ic) * hp + ih + pad) * wp + pad,
                  x + (static_cast<size_t>(ic) * h + ih) * w, sizeof(real) * w);
}

namespace {

// Output-stationary register tile: kLanes output columns for OCN
// consecutive output channels accumulate in registers across every tap,
// with one store per tile. Per-tap work is one row load plus OCN
// broadcast-FMAs, which keeps the FMA ports busy instead of the store port.
template <int OCN>
inline void conv_s1_tile(const real* xp, int cin, int hp, int wp, const real* w, size_t wstep,
                         int oc0, int k, int dil, int oh, int ow0, real* y, int ho, int wo) {
  vlane acc[OCN] = {};
  for (int ic = 0; ic < cin; ++ic) {
    const real* xbase = xp + (static_cast<size_t>(ic) * hp + oh) * wp + ow0;
    const real* wbase = w + (static_cast<size_t>(oc0) * cin + ic) * static_cast<size_t>(k) * k;
    for (int ky = 0; ky < k; ++ky) {
      const real* xr = xbase + static_cast<size_t>(ky) * dil * wp;
      for (int kx = 0; kx < k; ++kx) {
        const vlane xv = vload(xr + kx * dil);
        for (int j = 0; j < OCN; ++j)
          acc[j] += xv * wbase[static_cast<size_t>(j) * wstep + ky * k + kx];
      }
    }
  }
  for (int j = 0; j < OCN; ++j)
    vstore(y + (static_cast<size_t>(oc0 + j) * ho + oh) * wo + ow0, acc[j]);
}

// Same accumulation order for the ragged right edge (wt < kLanes columns).
template <int OCN>
void conv_s1_tail(const real* xp, int cin, int hp, int wp, const real* w, size_t wstep, int oc0,
                  int k, int dil, int oh, int ow0, int wt, real* y, int ho, int wo) {
  real acc[OCN][kLanes] = {};
  for (int ic = 0; ic < cin; ++ic) {
    const real* xbase = xp + (static_cast<size_t>(ic) * hp + oh) * wp + ow0;
    const real* wbase = w + (static_cast<size_t>(oc0) * cin + ic) * static_cast<size_t>(k) * k;
    for (int ky = 0; ky < k; ++ky) {
      const real* xr = xbase + static_cast<size_t>(ky) * dil * wp;
      for (int kx = 0; kx < k; ++kx) {
        const real* xi = xr + kx * dil;
        for (int j = 0; j < OCN; ++j) {
          const real wv = wbase[static_cast<size_t>(j) * wstep + ky * k + kx];
          for (int t = 0; t < wt; ++t) acc[j][t] += wv * xi[t];
        }
      }
    }
  }
  for (int j = 0; j < OCN; ++j)
    std::memcpy(y + (static_cast<size_t>(oc0 + j) * ho + oh) * wo + ow0, acc[j],
                sizeof(real) * wt);
}

template <int OCN>
void conv_s1_rows(const real* xp, int cin, int hp, int wp, const real* w, int cout, int oc0, int k,
                  int dil, real* y, int ho, int wo) {
  const size_t wstep = static_cast<size_t>(cin) * k * k;
  for (int oh = 0; oh < ho; ++oh) {
    int ow0 = 0;
    for (; ow0 + kLanes <= wo; ow0 += kLanes)
      conv_s1_tile<OCN>(xp, cin, hp, wp, w, wstep, oc0, k, dil, oh, ow0, y, ho, wo);
    if (ow0 < wo)
      conv_s1_tail<OCN>(xp, cin, hp, wp, w, wstep, oc0, k, dil, oh, ow0, wo - ow0, y, ho, wo);
  }
}

}  // namespace

void conv_s1(const real* xp, int cin, int hp, int wp, const real* w, int cout, int k, int dil,
             real* y, int ho, int wo) {
  int oc = 0;
  for (; oc + 4 <= cout; oc += 4) conv_s1_rows<4>(xp, cin, hp, wp, w, cout, oc, k, dil, y, ho, wo);
  switch (cout - oc) {
    case 3: conv_s1_rows<3>(xp, cin, hp, wp, w, cout, oc, k, dil, y, ho, wo); break;
    case 2: conv_s1_rows<2>(xp, cin, hp, wp, w, cout, oc, k, dil, y, ho, wo); break;
    case 1: conv_s1_rows<1>(xp, cin, hp, wp, w, cout, oc, k, dil, y, ho, wo); break;
    default: break;
  }
}

void conv_s1_dw_acc(const real* xp, int cin, int hp, int wp, const real* dy, int cout, int k,
                    int dil, real* dw, int ho, int wo) {
  // For one (oc, ic, ky) slice, all kx taps accumulate in lane-parallel
  // registers across the whole dy plane; horizontal sums happen only once
  // per tap at the end. kMaxK bounds the register tile (kernels here are
  // at most 7 wide).
  constexpr int kMaxK = 7;
  ADD_CHECK_ARG(k <= kMaxK, "kernel size %d exceeds dw accumulation tile", k);
  for (int oc = 0; oc < cout; ++oc) {
    const real* dyc = dy + static_cast<size_t>(oc) * ho * wo;
    for (int ic = 0; ic < cin; ++ic) {
      const real* xc = xp + static_cast<size_t>(ic) * hp * wp;
      real* dwc = dw + (static_cast<size_t>(oc) * cin + ic) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        vlane acc[kMaxK] = {};
        for (int oh = 0; oh < ho; ++oh) {
          const real* dyr = dyc + static_cast<size_t>(oh) * wo;
          const real* xr = xc + (static_cast<size_t>(oh) + static_cast<size_t>(ky) * dil) * wp;
          int ow0 = 0;
          for (; ow0 + kLanes <= wo; ow0 += kLanes) {
            const vlane dyv = vload(dyr + ow0);
            for (int kx = 0; kx < k; ++kx) acc[kx] += dyv * vload(xr + ow0 + kx * dil);
          }
          for (; ow0 < wo; ++ow0)
            for (int kx = 0; kx < k; ++kx)
              acc[kx][ow0 % kLanes] += dyr[ow0] * xr[ow0 + kx * dil];
        }
        for (int kx = 0; kx < k; ++kx) {
          real s = 0;
          for (int t = 0; t < kLanes; ++t) s += acc[kx][t];
          dwc[ky * k + kx] += s;
        }
      }
    }
  }
}

void dwconv(const real* xp, int c, int hp, int wp, const real* w, int k, int stride, int dil,
            real* y, int ho, int wo) {
  for (int ic = 0; ic < c; ++ic) {
    const real* xc = xp + static_cast<size_t>(ic) * hp * wp;
    const real* wc = w + static_cast<size_t>(ic) * k * k;
    real* yc = y + static_cast<size_t>(ic) * ho * wo;
    if (stride == 1) {
      for (int oh = 0; oh < ho; ++oh) {
        real* yr = yc + static_cast<size_t>(oh) * wo;
        std::memset(yr, 0, sizeof(real) * wo);
        for (int ky = 0; ky < k; ++ky) {
          const real* xr = xc + (static_cast<size_t>(oh) + ky * dil) * wp;
          for (int kx = 0; kx < k; ++kx) {
            const real wv = wc[ky * k + kx];
            const real* xi = xr + kx * dil;
            for (int ow = 0; ow < wo; ++ow) yr[ow] += wv * xi[ow];
          }
        }
      }
    } else {
      for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow) {
          real s = 0;
          for (int ky = 0; ky < k; ++ky) {
            const real* xr = xc + (static_cast<size_t>(oh) * stride + ky * dil) * wp;
            for (int kx = 0; kx < k; ++kx) s += wc[ky * k + kx] * xr[ow * stride + kx * dil];
          }
          yc[static_cast<size_t>(oh) * wo + ow] = s;
        }
    }
  }
}

void dwconv_bwd(const real* x, real* dx, int c, int h, int w, const real* wgt, real* dw, int k,
                int stride, int dil, int pad, const real* dy, int ho, int wo) {
  // Bounds are hoisted to per-tap output ranges, and dw accumulates into a
  // local tile so consecutive iterations never chain through memory.
  constexpr int kMaxK = 7;
  ADD_CHECK_ARG(k <= kMaxK, "kernel size %d exceeds dw accumulation tile", k);
  const auto lo_for = [&](int kd) {
    const int off = pad - kd;  // index = o*stride - off must be >= 0
    return off <= 0 ? 0 : (off + stride - 1) / stride;
  };
  const auto hi_for = [&](int kd, int n, int cap) {
    const int top = n - 1 + pad - kd;  // o*stride <= top
    return top < 0 ? 0 : std::min(cap, top / stride + 1);
  };
  for (int ic = 0; ic < c; ++ic) {
    const real* xc = x + static_cast<size_t>(ic) * h * w;
    real* dxc = dx ? dx + static_cast<size_t>(ic) * h * w : nullptr;
    const real* wc = wgt + static_cast<size_t>(ic) * k * k;
    real* dwc = dw ? dw + static_cast<size_t>(ic) * k * k : nullptr;
    const real* dyc = dy + static_cast<size_t>(ic) * ho * wo;
    real dwacc[kMaxK * kMaxK] = {};
    for (int ky = 0; ky < k; ++ky) {
      const int kyd = ky * dil;
      const int oh_lo = lo_for(kyd), oh_hi = hi_for(kyd, h, ho);
      for (int kx = 0; kx < k; ++kx) {
        const int kxd = kx * dil;
        const int ow_lo = lo_for(kxd), ow_hi = hi_for(kxd, w, wo);
        if (oh_lo >= oh_hi || ow_lo >= ow_hi) continue;
        const real wv = wc[ky * k + kx];
        const int shift = kxd - pad;  // iw = ow * stride + shift, >= 0 on [ow_lo, ow_hi)
        real s = 0;
        for (int oh = oh_lo; oh < oh_hi; ++oh) {
          const real* dyr = dyc + static_cast<size_t>(oh) * wo;
          const size_t row = static_cast<size_t>(oh * stride + kyd - pad) * w;
          const real* xr = xc + row;
          real* dxr = dxc ? dxc + row : nullptr;
          if (stride == 1) {
            if (dxr)
              for (int ow = ow_lo; ow < ow_hi; ++ow) dxr[ow + shift] += wv * dyr[ow];
            if (dwc) s += dot(dyr + ow_lo, xr + ow_lo + shift, ow_hi - ow_lo);
          } else {
            for (int ow = ow_lo; ow < ow_hi; ++ow) {
              const real g = dyr[ow];
              const int iw = ow * stride + shift;
              if (dxr) dxr[iw] += wv * g;
              if (dwc) s += xr[iw] * g;
            }
          }
        }
        dwacc[ky * k + kx] = s;
      }
    }
    if (dwc)
      for (int i = 0; i < k * k; ++i) dwc[i] += dwacc[i];
  }
}

void im2col(const real* x, int c, int h, int w, int k, int stride, int pad, int dil, real* col,
            int ho, int wo) {
  size_t r = 0;
  for (int ic = 0; ic < c; ++ic)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, ++r) {
        real* out = col + r * ho * wo;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride + ky * dil - pad;
          if (ih < 0 || ih >= h) {
            std::memset(out + static_cast<size_t>(oh) * wo, 0, sizeof(real) * wo);
            continue;
          }
          const real* xr = x + (static_cast<size_t>(ic) * h + ih) * w;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * stride + kx * dil - pad;
            out[static_cast<size_t>(oh) * wo + ow] = (iw >= 0 && iw < w) ? xr[iw] : real(0);
          }
        }
      }
}

void col2im_acc(const real* col, int c, int h, int w, int k, int stride, int pad, int dil,
                real* dx, int ho, int wo) {
  size_t r = 0;
  for (int ic = 0; ic < c; ++ic)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, ++r) {
        const real* in = col + r * ho * wo;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride + ky * dil - pad;
          if (ih < 0 || ih >= h) continue;
          real* xr = dx + (static_cast<size_t>(ic) * h + ih) * w;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * stride + kx * dil - pad;
            if (iw >= 0 && iw < w) xr[iw] += in[static_cast<size_t>(oh) * wo + ow];
          }
        }
      }
}

void maxpool(const real* x, int c, int h, int w, int k, int stride, int pad, real* y,
             int32_t* argmax, int ho, int wo) {
  for (int ic = 0; ic < c; ++ic) {
    const real* xc = x + static_cast<size_t>(ic) * h * w;
    const size_t ybase = static_cast<size_t>(ic) * ho * wo;
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow) {
        real best = -std::numeric_limits<real>::infinity();
        int32_t bi = -1;
        for (int ky = 0; ky < k; ++ky) {
          const int ih = oh * stride + ky - pad;
          if (ih < 0 || ih >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int iw = ow * stride + kx - pad;
            if (iw < 0 || iw >= w) continue;
            const real v = xc[static_cast<size_t>(ih) * w + iw];
            // NaN wins and then sticks (v > NaN stays false), so a poisoned
            // window propagates instead of being masked by a finite neighbor.
            if (v > best || std::isnan(v)) {
              best = v;
              bi = static_cast<int32_t>(ic * h * w + ih * w + iw);
            }
          }
        }
        y[ybase + static_cast<size_t>(oh) * wo + ow] = best;
        argmax[ybase + static_cast<size_t>(oh) * wo + ow] = bi;
      }
  }
}

void avgpool(const real* x, int c, int h, int w, int k, int stride, int pad, real* y, int ho,
             int wo) {
  for (int ic = 0; ic < c; ++ic) {
    const real* xc = x + static_cast<size_t>(ic) * h * w;
    real* yc = y + static_cast<size_t>(ic) * ho * wo;
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow) {
        real s = 0;
        int cnt = 0;
        for (int ky = 0; ky < k; ++ky) {
          const int ih = oh * stride + ky - pad;
          if (ih < 0 || ih >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int iw = ow * stride + kx - pad;
            if (iw < 0 || iw >= w) continue;
            s += xc[static_cast<size_t>(ih) * w + iw];
            ++cnt;
          }
        }
        yc[static_cast<size_t>(oh) * wo + ow] = s / static_cast<real>(cnt);
      }
  }
}

void avgpool_bwd_acc(real* dx, int c, int h, int w, int k, int stride, int pad, const real* dy,
                     int ho, int wo) {
  for (int ic = 0; ic < c; ++ic) {
    real* dxc = dx + static_cast<size_t>(ic) * h * w;
    const real* dyc = dy + static_cast<size_t>(ic) * ho * wo;
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow) {
        int cnt = 0;
        for (int ky = 0; ky < k; ++ky) {
          const int ih = oh * stride + ky - pad;
          if (ih < 0 || ih >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int iw = ow * stride + kx - pad;
            if (iw >= 0 && iw < w) ++cnt;
          }
        }
        const real g = dyc[static_cast<size_t>(oh) * wo + ow] / static_cast<real>(cnt);
        for (int ky = 0; ky < k; ++ky) {
          const int ih = oh * stride + ky - pad;
          if (ih < 0 || ih >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int iw = ow * stride + kx - pad;
            if (iw >= 0 && iw < w) dxc[static_cast<size_t>(ih) * w + iw] += g;
          }
        }
      }
  }
}

namespace {

struct LerpAxis {
  int lo, hi;
  real f;  // weight of hi
};

inline LerpAxis lerp_axis(int o, int out_n, int in_n) {
  if (out_n <= 1 || in_n <= 1) return {0, 0, real(0)};
  const double src = static_cast<double>(o) * (in_n - 1) / (out_n - 1);
  int lo = static_cast<int>(src);
  if (lo >= in_n - 1) lo = in_n - 2;
  const real f = static_cast<real>(src - lo);
  return {lo, lo + 1, f};
}

}  // namespace

void bilinear(const real* x, int c, int h, int w, real* y, int ho, int wo) {
  for (int oh = 0; oh < ho; ++oh) {
    const LerpAxis ay = lerp_axis(oh, ho, h);
    for (int ow = 0; ow < wo; ++ow) {
      const LerpAxis ax = lerp_axis(ow, wo, w);
      const real w00 = (1 - ay.f) * (1 - ax.f), w01 = (1 - ay.f) * ax.f;
      const real w10 = ay.f * (1 - ax.f), w11 = ay.f * ax.f;
      for (int ic = 0; ic < c; ++ic) {
        const real* xc = x + static_cast<size_t>(ic) * h * w;
        y[(static_cast<size_t>(ic) * ho + oh) * wo + ow] =
            w00 * xc[static_cast<size_t>(ay.lo) * w + ax.lo] +
            w01 * xc[static_cast<size_t>(ay.lo) * w + ax.hi] +
            w10 * xc[static_cast<size_t>(ay.hi) * w + ax.lo] +
            w11 * xc[static_cast<size_t>(ay.hi) * w + ax.hi];
      }
    }
  }
}

void bilinear_bwd_acc(real* dx, int c, int h, int w, const real* dy, int ho, int wo) {
  for (int oh = 0; oh < ho; ++oh) {
    const LerpAxis ay = lerp_axis(oh, ho, h);
    for (int ow = 0; ow < wo; ++ow) {
      const LerpAxis ax = lerp_axis(ow, wo, w);
      const real w00 = (1 - ay.f) * (1 - ax.f), w01 = (1 - ay.f) * ax.f;
      const real w10 = ay.f * (1 - ax.f), w11 = ay.f * ax.f;
      for (int ic = 0; ic < c; ++ic) {
        real* dxc = dx + static_cast<size_t>(ic) * h * w;
        const real g = dy[(static_cast<size_t>(ic) * ho + oh) * wo + ow];
        dxc[static_cast<size_t>(ay.lo) * w + ax.lo] += w00 * g;
        dxc[static_cast<size_t>(ay.lo) * w + ax.hi] += w01 * g;
        dxc[static_cast<size_t>(ay.hi) * w + ax.lo] += w10 * g;
        dxc[static_cast<size_t>(ay.hi) * w + ax.hi] += w11 * g;
      }
    }
  }
}

}  // namespace add::kern
