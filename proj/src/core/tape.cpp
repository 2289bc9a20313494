#include "tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "kernels.hpp"

namespace add {

void Tape::backward(Tensor loss) {
  ADD_CHECK_ARG(loss.numel() == 1, "backward needs a scalar loss, got %s",
                shape_str(loss.shape()).c_str());
  ADD_CHECK(loss.participates(), ErrorCode::InvalidArgument,
            "backward on a loss that is detached from every parameter");
  loss.grad_acquire()[0] = real(1);
  for (size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i]) {
      nodes_[i]();
      nodes_[i] = nullptr;  // frees captured activations as we go
    }
  }
  nodes_.clear();
}

namespace ops {
namespace {

using detail::BufferPool;

// Pool-backed scratch buffer for kernel workspaces.
struct Scratch {
  std::vector<real> v;
  explicit Scratch(size_t n, bool zeroed = false) : v(BufferPool::acquire(n, zeroed)) {}
  Scratch(const Scratch&) = delete;
  ~Scratch() { BufferPool::release(std::move(v)); }
  real* p() { return v.data(); }
};

void axpy(real* y, const real* x, real a, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void acc(real* y, const real* x, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += x[i];
}

bool any_participates(const std::vector<Tensor>& ts) {
  return std::any_of(ts.begin(), ts.end(), [](const Tensor& t) { return t.participates(); });
}

int conv_out(int in, int k, int stride, int pad, int dil) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

}  // namespace

// --------------------------------------------------------------------------
// Convolution. Execution paths chosen by geometry:
//   * depthwise (groups == Cin == Cout): direct per-channel loops,
//   * 1x1 stride-1 dense: plain GEMM,
//   * stride-1 dense with k>1: direct register-tiled kernel on a padded copy
//     (the hot path; cells are dominated by these),
//   * everything else (strided and/or grouped): per-group im2col + GEMM.
// All paths share one backward structure: dx via the matching transpose
// operation, dw via correlation of input with the output gradient.
// --------------------------------------------------------------------------

namespace {

enum class ConvPath { Depthwise, Gemm1x1, TiledS1, Im2col };

struct ConvPlan {
  int n, cin, cout, h, w, k, stride, dil, groups, pad, ho, wo;
  int cing, coutg;      // channels per group
  int hp, wp;           // padded input size
  int64_t in_sz, out_sz;
  ConvPath path;
};

ConvPlan plan_conv(const Tensor& x, const Tensor& w, const ConvSpec& spec) {
  ADD_CHECK_ARG(x.rank() == 4, "conv2d input must be [N,C,H,W], got %s",
                shape_str(x.shape()).c_str());
  ADD_CHECK_ARG(w.rank() == 4, "conv2d weight must be rank 4, got %s",
                shape_str(w.shape()).c_str());
  ConvPlan p;
  p.n = x.dim(0), p.cin = x.dim(1), p.h = x.dim(2), p.w = x.dim(3);
  p.k = w.dim(2);
  ADD_CHECK_ARG(w.dim(3) == p.k && p.k % 2 == 1,
                "conv2d kernels must be square and odd, got %dx%d", p.k, w.dim(3));
  p.stride = spec.stride, p.dil = spec.dilation, p.groups = spec.groups;
  ADD_CHECK_ARG(p.stride >= 1 && p.dil >= 1, "conv2d stride/dilation must be >= 1");
  ADD_CHECK_CFG(p.groups >= 1 && p.cin % p.groups == 0,
                "conv2d groups=%d must divide input channels %d", p.groups, p.cin);
  p.cing = p.cin / p.groups;
  ADD_CHECK_ARG(w.dim(1) == p.cing, "conv2d weight expects %d channels per group, got %d", p.cing,
                w.dim(1));
  p.cout = w.dim(0);
  ADD_CHECK_CFG(p.cout % p.groups == 0, "conv2d output channels %d not divisible by groups %d",
                p.cout, p.groups);
  p.coutg = p.cout / p.groups;
  p.pad = spec.padding < 0 ? p.dil * (p.k - 1) / 2 : spec.padding;
  p.ho = conv_out(p.h, p.k, p.stride, p.pad, p.dil);
  p.wo = conv_out(p.w, p.k, p.stride, p.pad, p.dil);
  ADD_CHECK_ARG(p.ho > 0 && p.wo > 0, "conv2d output would be empty for input %dx%d", p.h, p.w);
  p.hp = p.h + 2 * p.pad, p.wp = p.w + 2 * p.pad;
  p.in_sz = static_cast<int64_t>(p.cin) * p.h * p.w;
  p.out_sz = static_cast<int64_t>(p.cout) * p.ho * p.wo;
  if (p.groups == p.cin && p.cout == p.cin && p.cing == 1)
    p.path = ConvPath::Depthwise;
  else if (p.groups == 1 && p.k == 1 && p.stride == 1 && p.pad == 0)
    p.path = ConvPath::Gemm1x1;
  else if (p.groups == 1 && p.stride == 1 && p.pad <= p.dil * (p.k - 1))
    p.path = ConvPath::TiledS1;
  else
    p.path = ConvPath::Im2col;
  return p;
}

// Shared by forward (strided/grouped) and its backward.
void conv_im2col_fwd(const ConvPlan& p, const real* x, const real* w, real* y) {
  const int64_t col_rows = static_cast<int64_t>(p.cing) * p.k * p.k;
  const int64_t g_in = static_cast<int64_t>(p.cing) * p.h * p.w;
  const int64_t g_out = static_cast<int64_t>(p.coutg) * p.ho * p.wo;
  const int64_t g_w = static_cast<int64_t>(p.coutg) * col_rows;
  Scratch col(static_cast<size_t>(col_rows) * p.ho * p.wo);
  for (int i = 0; i < p.n; ++i)
    for (int g = 0; g < p.groups; ++g) {
      kern::im2col(x + i * p.in_sz + g * g_in, p.cing, p.h, p.w, p.k, p.stride, p.pad, p.dil,
                   col.p(), p.ho, p.wo);
      kern::gemm(false, false, p.coutg, p.ho * p.wo, static_cast<int>(col_rows), 1, w + g * g_w,
                 static_cast<int>(col_rows), col.p(), p.ho * p.wo, 0,
                 y + i * p.out_sz + g * g_out, p.ho * p.wo);
    }
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& w, const ConvSpec& spec) {
  const ConvPlan p = plan_conv(x, w, spec);
  Tensor y = Tensor::empty({p.n, p.cout, p.ho, p.wo});

  switch (p.path) {
    case ConvPath::Depthwise: {
      Scratch xp(static_cast<size_t>(p.cin) * p.hp * p.wp);
      for (int i = 0; i < p.n; ++i) {
        kern::pad_copy(x.data() + i * p.in_sz, p.cin, p.h, p.w, p.pad, xp.p());
        kern::dwconv(xp.p(), p.cin, p.hp, p.wp, w.data(), p.k, p.stride, p.dil,
                     y.data() + i * p.out_sz, p.ho, p.wo);
      }
      break;
    }
    case ConvPath::Gemm1x1:
      for (int i = 0; i < p.n; ++i)
        kern::gemm(false, false, p.cout, p.h * p.w, p.cin, 1, w.data(), p.cin,
                   x.data() + i * p.in_sz, p.h * p.w, 0, y.data() + i * p.out_sz, p.h * p.w);
      break;
    case ConvPath::TiledS1: {
      Scratch xp(static_cast<size_t>(p.cin) * p.hp * p.wp);
      for (int i = 0; i < p.n; ++i) {
        kern::pad_copy(x.data() + i * p.in_sz, p.cin, p.h, p.w, p.pad, xp.p());
        kern::conv_s1(xp.p(), p.cin, p.hp, p.wp, w.data(), p.cout, p.k, p.dil,
                      y.data() + i * p.out_sz, p.ho, p.wo);
      }
      break;
    }
    case ConvPath::Im2col:
      conv_im2col_fwd(p, x.data(), w.data(), y.data());
      break;
  }

  if (tape.enabled() && (x.participates() || w.participates())) {
    y.mark_participating();
    Tensor xc = x, wc = w, yc = y;
    tape.record([xc, wc, yc, p]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      const bool need_dx = xc.participates(), need_dw = wc.participates();
      real* dxp = need_dx ? xc.grad_acquire() : nullptr;
      real* dwp = need_dw ? wc.grad_acquire() : nullptr;

      switch (p.path) {
        case ConvPath::Depthwise:
          for (int i = 0; i < p.n; ++i)
            kern::dwconv_bwd(xc.data() + i * p.in_sz, dxp ? dxp + i * p.in_sz : nullptr, p.cin,
                             p.h, p.w, wc.data(), dwp, p.k, p.stride, p.dil, p.pad,
                             dy + i * p.out_sz, p.ho, p.wo);
          return;
        case ConvPath::Gemm1x1:
          for (int i = 0; i < p.n; ++i) {
            if (need_dx)
              kern::gemm(true, false, p.cin, p.h * p.w, p.cout, 1, wc.data(), p.cin,
                         dy + i * p.out_sz, p.h * p.w, 1, dxp + i * p.in_sz, p.h * p.w);
            if (need_dw)
              kern::gemm(false, true, p.cout, p.cin, p.h * p.w, 1, dy + i * p.out_sz, p.h * p.w,
                         xc.data() + i * p.in_sz, p.h * p.w, 1, dwp, p.cin);
          }
          return;
        case ConvPath::TiledS1: {
          // dx = convolution of dy (padded by dil*(k-1)-pad) with the weight
          // flipped spatially and transposed over channels.
          const int k = p.k, cin = p.cin, cout = p.cout;
          const int bpad = p.dil * (k - 1) - p.pad;
          const int bhp = p.ho + 2 * bpad, bwp = p.wo + 2 * bpad;
          std::vector<real> wt;
          if (need_dx) {
            wt.resize(static_cast<size_t>(cout) * cin * k * k);
            for (int oc = 0; oc < cout; ++oc)
              for (int ic = 0; ic < cin; ++ic)
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx)
                    wt[((static_cast<size_t>(ic) * cout + oc) * k + ky) * k + kx] =
                        wc.data()[((static_cast<size_t>(oc) * cin + ic) * k + (k - 1 - ky)) * k +
                                  (k - 1 - kx)];
          }
          Scratch dyp(need_dx ? static_cast<size_t>(cout) * bhp * bwp : 0);
          Scratch dxs(need_dx ? static_cast<size_t>(p.in_sz) : 0);
          Scratch xp(need_dw ? static_cast<size_t>(cin) * p.hp * p.wp : 0);
          for (int i = 0; i < p.n; ++i) {
            if (need_dx) {
              kern::pad_copy(dy + i * p.out_sz, cout, p.ho, p.wo, bpad, dyp.p());
              kern::conv_s1(dyp.p(), cout, bhp, bwp, wt.data(), cin, k, p.dil, dxs.p(), p.h, p.w);
              acc(dxp + i * p.in_sz, dxs.p(), p.in_sz);
            }
            if (need_dw) {
              kern::pad_copy(xc.data() + i * p.in_sz, cin, p.h, p.w, p.pad, xp.p());
              kern::conv_s1_dw_acc(xp.p(), cin, p.hp, p.wp, dy + i * p.out_sz, cout, k, p.dil,
                                   dwp, p.ho, p.wo);
            }
          }
          return;
        }
        case ConvPath::Im2col: {
          const int64_t col_rows = static_cast<int64_t>(p.cing) * p.k * p.k;
          const int64_t g_in = static_cast<int64_t>(p.cing) * p.h * p.w;
          const int64_t g_out = static_cast<int64_t>(p.coutg) * p.ho * p.wo;
          const int64_t g_w = static_cast<int64_t>(p.coutg) * col_rows;
          Scratch col(static_cast<size_t>(col_rows) * p.ho * p.wo);
          Scratch dcol(need_dx ? static_cast<size_t>(col_rows) * p.ho * p.wo : 0);
          for (int i = 0; i < p.n; ++i)
            for (int g = 0; g < p.groups; ++g) {
              if (need_dw) {
                kern::im2col(xc.data() + i * p.in_sz + g * g_in, p.cing, p.h, p.w, p.k, p.stride,
                             p.pad, p.dil, col.p(), p.ho, p.wo);
                kern::gemm(false, true, p.coutg, static_cast<int>(col_rows), p.ho * p.wo, 1,
                           dy + i * p.out_sz + g * g_out, p.ho * p.wo, col.p(), p.ho * p.wo, 1,
                           dwp + g * g_w, static_cast<int>(col_rows));
              }
              if (need_dx) {
                kern::gemm(true, false, static_cast<int>(col_rows), p.ho * p.wo, p.coutg, 1,
                           wc.data() + g * g_w, static_cast<int>(col_rows),
                           dy + i * p.out_sz + g * g_out, p.ho * p.wo, 0, dcol.p(), p.ho * p.wo);
                kern::col2im_acc(dcol.p(), p.cing, p.h, p.w, p.k, p.stride, p.pad, p.dil,
                                 dxp + i * p.in_sz + g * g_in, p.ho, p.wo);
              }
            }
          return;
        }
      }
    });
  }
  return y;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  ADD_CHECK_ARG(x.rank() == 2 && w.rank() == 2 && b.rank() == 1,
                "linear expects x [N,D], w [D,K], b [K]; got %s, %s, %s",
                shape_str(x.shape()).c_str(), shape_str(w.shape()).c_str(),
                shape_str(b.shape()).c_str());
  const int n = x.dim(0), d = x.dim(1), k = w.dim(1);
  ADD_CHECK_ARG(w.dim(0) == d && b.dim(0) == k, "linear shape mismatch: x %s, w %s, b %s",
                shape_str(x.shape()).c_str(), shape_str(w.shape()).c_str(),
                shape_str(b.shape()).c_str());
  Tensor y = Tensor::empty({n, k});
  kern::gemm(false, false, n, k, d, 1, x.data(), d, w.data(), k, 0, y.data(), k);
  for (int i = 0; i < n; ++i) acc(y.data() + static_cast<size_t>(i) * k, b.data(), k);

  if (tape.enabled() && (x.participates() || w.participates() || b.participates())) {
    y.mark_participating();
    Tensor xc = x, wc = w, bc = b, yc = y;
    tape.record([xc, wc, bc, yc, n, d, k]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      if (xc.participates())
        kern::gemm(false, true, n, d, k, 1, dy, k, wc.data(), k, 1, xc.grad_acquire(), d);
      if (wc.participates())
        kern::gemm(true, false, d, k, n, 1, xc.data(), d, dy, k, 1, wc.grad_acquire(), k);
      if (bc.participates()) {
        real* db = bc.grad_acquire();
        for (int i = 0; i < n; ++i) acc(db, dy + static_cast<size_t>(i) * k, k);
      }
    });
  }
  return y;
}

Tensor batch_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training, real momentum,
                  real eps) {
  ADD_CHECK_ARG(x.rank() == 4, "batch_norm input must be [N,C,H,W], got %s",
                shape_str(x.shape()).c_str());
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  ADD_CHECK_ARG(gamma.numel() == c && beta.numel() == c && running_mean.numel() == c &&
                    running_var.numel() == c,
                "batch_norm parameter size mismatch for %d channels", c);
  const int64_t hw = static_cast<int64_t>(h) * w;
  const int64_t csz = hw;
  const int64_t isz = static_cast<int64_t>(c) * hw;
  const int64_t m = static_cast<int64_t>(n) * hw;
  ADD_CHECK_ARG(!training || m >= 2, "batch_norm in training mode needs N*H*W >= 2, got %lld",
                static_cast<long long>(m));

  std::vector<real> mean(c), invstd(c);
  if (training) {
    for (int ic = 0; ic < c; ++ic) {
      double s = 0;
      for (int i = 0; i < n; ++i) {
        const real* p = x.data() + i * isz + ic * csz;
        for (int64_t j = 0; j < hw; ++j) s += p[j];
      }
      const double mu = s / static_cast<double>(m);
      double v = 0;
      for (int i = 0; i < n; ++i) {
        const real* p = x.data() + i * isz + ic * csz;
        for (int64_t j = 0; j < hw; ++j) {
          const double d = p[j] - mu;
          v += d * d;
        }
      }
      const double var = v / static_cast<double>(m);
      mean[ic] = static_cast<real>(mu);
      invstd[ic] = static_cast<real>(1.0 / std::sqrt(var + eps));
      const double unbiased = m > 1 ? v / static_cast<double>(m - 1) : var;
      running_mean.data()[ic] =
          static_cast<real>((1 - momentum) * running_mean.data()[ic] + momentum * mu);
      running_var.data()[ic] =
          static_cast<real>((1 - momentum) * running_var.data()[ic] + momentum * unbiased);
    }
  } else {
    for (int ic = 0; ic < c; ++ic) {
      mean[ic] = running_mean.data()[ic];
      invstd[ic] = static_cast<real>(1.0 / std::sqrt(static_cast<double>(running_var.data()[ic]) +
                                                     eps));
    }
  }

  Tensor y = Tensor::empty(x.shape());
  for (int i = 0; i < n; ++i)
    for (int ic = 0; ic < c; ++ic) {
      const real* p = x.data() + i * isz + ic * csz;
      real* q = y.data() + i * isz + ic * csz;
      const real a = gamma.data()[ic] * invstd[ic];
      const real b = beta.data()[ic] - a * mean[ic];
      for (int64_t j = 0; j < hw; ++j) q[j] = a * p[j] + b;
    }

  if (tape.enabled() && (x.participates() || gamma.participates() || beta.participates())) {
    y.mark_participating();
    Tensor xc = x, gc = gamma, bc = beta, yc = y;
    auto mn = std::move(mean);
    auto is = std::move(invstd);
    tape.record([xc, gc, bc, yc, mn, is, n, c, hw, isz, csz, m, training]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      const bool need_dx = xc.participates();
      real* dx = need_dx ? xc.grad_acquire() : nullptr;
      real* dg = gc.participates() ? gc.grad_acquire() : nullptr;
      real* db = bc.participates() ? bc.grad_acquire() : nullptr;
      for (int ic = 0; ic < c; ++ic) {
        double s1 = 0, s2 = 0;  // sum dy, sum dy*xhat
        for (int i = 0; i < n; ++i) {
          const real* dyp = dy + i * isz + ic * csz;
          const real* xp = xc.data() + i * isz + ic * csz;
          for (int64_t j = 0; j < hw; ++j) {
            s1 += dyp[j];
            s2 += dyp[j] * (xp[j] - mn[ic]) * is[ic];
          }
        }
        if (dg) dg[ic] += static_cast<real>(s2);
        if (db) db[ic] += static_cast<real>(s1);
        if (!need_dx) continue;
        const real a = gc.data()[ic] * is[ic];
        if (training) {
          const real k1 = static_cast<real>(s1 / static_cast<double>(m));
          const real k2 = static_cast<real>(s2 / static_cast<double>(m));
          for (int i = 0; i < n; ++i) {
            const real* dyp = dy + i * isz + ic * csz;
            const real* xp = xc.data() + i * isz + ic * csz;
            real* dxp = dx + i * isz + ic * csz;
            for (int64_t j = 0; j < hw; ++j) {
              const real xhat = (xp[j] - mn[ic]) * is[ic];
              dxp[j] += a * (dyp[j] - k1 - xhat * k2);
            }
          }
        } else {
          for (int i = 0; i < n; ++i) {
            const real* dyp = dy + i * isz + ic * csz;
            real* dxp = dx + i * isz + ic * csz;
            for (int64_t j = 0; j < hw; ++j) dxp[j] += a * dyp[j];
          }
        }
      }
    });
  }
  return y;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor y = Tensor::empty(x.shape());
  const int64_t n = x.numel();
  // Comparison is written so a NaN input falls through to the value branch:
  // non-finite activations must reach the loss rather than silently zero.
  for (int64_t i = 0; i < n; ++i) y.data()[i] = x.data()[i] < 0 ? real(0) : x.data()[i];
  if (tape.enabled() && x.participates()) {
    y.mark_participating();
    Tensor xc = x, yc = y;
    tape.record([xc, yc, n]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      real* dx = xc.grad_acquire();
      const real* yv = yc.data();
      for (int64_t i = 0; i < n; ++i)
        if (yv[i] > 0) dx[i] += dy[i];
    });
  }
  return y;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor y = Tensor::empty(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    const real v = x.data()[i];
    y.data()[i] = v >= 0 ? 1 / (1 + std::exp(-v)) : std::exp(v) / (1 + std::exp(v));
  }
  if (tape.enabled() && x.participates()) {
    y.mark_participating();
    Tensor xc = x, yc = y;
    tape.record([xc, yc, n]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      real* dx = xc.grad_acquire();
      const real* yv = yc.data();
      for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * yv[i] * (1 - yv[i]);
    });
  }
  return y;
}

Tensor pool2d(Tape& tape, const Tensor& x, PoolKind kind, int k, int stride, int pad) {
  ADD_CHECK_ARG(x.rank() == 4, "pooling input must be [N,C,H,W], got %s",
                shape_str(x.shape()).c_str());
  ADD_CHECK_ARG(k >= 1 && stride >= 1 && pad >= 0, "pooling needs k,stride >= 1 and pad >= 0");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  ADD_CHECK_ARG(k <= h + 2 * pad && k <= w + 2 * pad,
                "pooling window %d larger than padded input %dx%d", k, h + 2 * pad, w + 2 * pad);
  const int ho = conv_out(h, k, stride, pad, 1), wo = conv_out(w, k, stride, pad, 1);
  Tensor y = Tensor::empty({n, c, ho, wo});
  const int64_t in_sz = static_cast<int64_t>(c) * h * w;
  const int64_t out_sz = static_cast<int64_t>(c) * ho * wo;

  if (kind == PoolKind::Max) {
    std::vector<int32_t> argmax(static_cast<size_t>(n) * out_sz);
    for (int i = 0; i < n; ++i)
      kern::maxpool(x.data() + i * in_sz, c, h, w, k, stride, pad, y.data() + i * out_sz,
                    argmax.data() + i * out_sz, ho, wo);
    if (tape.enabled() && x.participates()) {
      y.mark_participating();
      Tensor xc = x, yc = y;
      auto am = std::move(argmax);
      tape.record([xc, yc, am, n, in_sz, out_sz]() mutable {
        const real* dy = yc.grad();
        if (!dy) return;
        real* dx = xc.grad_acquire();
        for (int i = 0; i < n; ++i)
          for (int64_t j = 0; j < out_sz; ++j)
            dx[i * in_sz + am[i * out_sz + j]] += dy[i * out_sz + j];
      });
    }
    return y;
  }

  for (int i = 0; i < n; ++i)
    kern::avgpool(x.data() + i * in_sz, c, h, w, k, stride, pad, y.data() + i * out_sz, ho, wo);
  if (tape.enabled() && x.participates()) {
    y.mark_participating();
    Tensor xc = x, yc = y;
    tape.record([xc, yc, n, c, h, w, k, stride, pad, ho, wo, in_sz, out_sz]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      real* dx = xc.grad_acquire();
      for (int i = 0; i < n; ++i)
        kern::avgpool_bwd_acc(dx + i * in_sz, c, h, w, k, stride, pad, dy + i * out_sz, ho, wo);
    });
  }
  return y;
}

Tensor max_pool3(Tape& tape, const Tensor& x, int stride) {
  return pool2d(tape, x, PoolKind::Max, 3, stride, 1);
}

Tensor avg_pool3(Tape& tape, const Tensor& x, int stride) {
  return pool2d(tape, x, PoolKind::Avg, 3, stride, 1);
}

Tensor global_avg_pool(Tape& tape, const Tensor& x) {
  ADD_CHECK_ARG(x.rank() == 4, "global_avg_pool input must be [N,C,H,W], got %s",
                shape_str(x.shape()).c_str());
  const int n = x.dim(0), c = x.dim(1);
  const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  Tensor y = Tensor::empty({n, c});
  for (int i = 0; i < n; ++i)
    for (int ic = 0; ic < c; ++ic) {
      const real* p = x.data() + (static_cast<int64_t>(i) * c + ic) * hw;
      double s = 0;
      for (int64_t j = 0; j < hw; ++j) s += p[j];
      y.data()[static_cast<size_t>(i) * c + ic] = static_cast<real>(s / static_cast<double>(hw));
    }
  if (tape.enabled() && x.participates()) {
    y.mark_participating();
    Tensor xc = x, yc = y;
    tape.record([xc, yc, n, c, hw]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      real* dx = xc.grad_acquire();
      for (int i = 0; i < n; ++i)
        for (int ic = 0; ic < c; ++ic) {
          const real g = dy[static_cast<size_t>(i) * c + ic] / static_cast<real>(hw);
          real* dxp = dx + (static_cast<int64_t>(i) * c + ic) * hw;
          for (int64_t j = 0; j < hw; ++j) dxp[j] += g;
        }
    });
  }
  return y;
}

Tensor bilinear_upsample(Tape& tape, const Tensor& x, int ho, int wo) {
  ADD_CHECK_ARG(x.rank() == 4, "bilinear_upsample input must be [N,C,H,W], got %s",
                shape_str(x.shape()).c_str());
  ADD_CHECK_ARG(ho >= 1 && wo >= 1, "bilinear_upsample target %dx%d invalid", ho, wo);
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y = Tensor::empty({n, c, ho, wo});
  const int64_t in_sz = static_cast<int64_t>(c) * h * w;
  const int64_t out_sz = static_cast<int64_t>(c) * ho * wo;
  for (int i = 0; i < n; ++i)
    kern::bilinear(x.data() + i * in_sz, c, h, w, y.data() + i * out_sz, ho, wo);
  if (tape.enabled() && x.participates()) {
    y.mark_participating();
    Tensor xc = x, yc = y;
    tape.record([xc, yc, n, c, h, w, ho, wo, in_sz, out_sz]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      real* dx = xc.grad_acquire();
      for (int i = 0; i < n; ++i)
        kern::bilinear_bwd_acc(dx + i * in_sz, c, h, w, dy + i * out_sz, ho, wo);
    });
  }
  return y;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) { return sum(tape, {a, b}); }

Tensor sum(Tape& tape, const std::vector<Tensor>& items) {
  ADD_CHECK_ARG(!items.empty(), "sum of zero tensors");
  const Shape& shape = items[0].shape();
  for (const Tensor& t : items)
    ADD_CHECK_ARG(t.shape() == shape, "sum shape mismatch: %s vs %s", shape_str(shape).c_str(),
                  shape_str(t.shape()).c_str());
  const int64_t n = items[0].numel();
  Tensor y = items[0].clone_values();
  for (size_t j = 1; j < items.size(); ++j) acc(y.data(), items[j].data(), n);
  if (tape.enabled() && any_participates(items)) {
    y.mark_participating();
    std::vector<Tensor> ic = items;
    Tensor yc = y;
    tape.record([ic, yc, n]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      for (Tensor& t : ic)
        if (t.participates()) acc(t.grad_acquire(), dy, n);
    });
  }
  return y;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  ADD_CHECK_ARG(a.shape() == b.shape(), "mul shape mismatch: %s vs %s",
                shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str());
  const int64_t n = a.numel();
  Tensor y = Tensor::empty(a.shape());
  for (int64_t i = 0; i < n; ++i) y.data()[i] = a.data()[i] * b.data()[i];
  if (tape.enabled() && (a.participates() || b.participates())) {
    y.mark_participating();
    Tensor ac = a, bc = b, yc = y;
    tape.record([ac, bc, yc, n]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      if (ac.participates()) {
        real* da = ac.grad_acquire();
        for (int64_t i = 0; i < n; ++i) da[i] += dy[i] * bc.data()[i];
      }
      if (bc.participates()) {
        real* db = bc.grad_acquire();
        for (int64_t i = 0; i < n; ++i) db[i] += dy[i] * ac.data()[i];
      }
    });
  }
  return y;
}

Tensor lincomb(Tape& tape, real alpha, const Tensor& a, real beta, const Tensor& b) {
  ADD_CHECK_ARG(a.shape() == b.shape(), "lincomb shape mismatch: %s vs %s",
                shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str());
  const int64_t n = a.numel();
  Tensor y = Tensor::empty(a.shape());
  for (int64_t i = 0; i < n; ++i) y.data()[i] = alpha * a.data()[i] + beta * b.data()[i];
  if (tape.enabled() && (a.participates() || b.participates())) {
    y.mark_participating();
    Tensor ac = a, bc = b, yc = y;
    tape.record([ac, bc, yc, alpha, beta, n]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      if (ac.participates()) axpy(ac.grad_acquire(), dy, alpha, n);
      if (bc.participates()) axpy(bc.grad_acquire(), dy, beta, n);
    });
  }
  return y;
}

Tensor sum_all(Tape& tape, const Tensor& x) {
  const int64_t n = x.numel();
  double s = 0;
  for (int64_t i = 0; i < n; ++i) s += x.data()[i];
  Tensor y = Tensor::scalar(static_cast<real>(s));
  if (tape.enabled() && x.participates()) {
    y.mark_participating();
    Tensor xc = x, yc = y;
    tape.record([xc, yc, n]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      real* dx = xc.grad_acquire();
      for (int64_t i = 0; i < n; ++i) dx[i] += dy[0];
    });
  }
  return y;
}

Tensor mul_channel(Tape& tape, const Tensor& x, const Tensor& gate) {
  ADD_CHECK_ARG(x.rank() == 4 && gate.rank() == 4 && gate.dim(1) == 1 && gate.dim(0) == x.dim(0) &&
                    gate.dim(2) == x.dim(2) && gate.dim(3) == x.dim(3),
                "mul_channel expects x [N,C,H,W] and gate [N,1,H,W]; got %s and %s",
                shape_str(x.shape()).c_str(), shape_str(gate.shape()).c_str());
  const int n = x.dim(0), c = x.dim(1);
  const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  Tensor y = Tensor::empty(x.shape());
  for (int i = 0; i < n; ++i) {
    const real* g = gate.data() + i * hw;
    for (int ic = 0; ic < c; ++ic) {
      const real* p = x.data() + (static_cast<int64_t>(i) * c + ic) * hw;
      real* q = y.data() + (static_cast<int64_t>(i) * c + ic) * hw;
      for (int64_t j = 0; j < hw; ++j) q[j] = p[j] * g[j];
    }
  }
  if (tape.enabled() && (x.participates() || gate.participates())) {
    y.mark_participating();
    Tensor xc = x, gc = gate, yc = y;
    tape.record([xc, gc, yc, n, c, hw]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      real* dx = xc.participates() ? xc.grad_acquire() : nullptr;
      real* dg = gc.participates() ? gc.grad_acquire() : nullptr;
      for (int i = 0; i < n; ++i) {
        const real* g = gc.data() + i * hw;
        for (int ic = 0; ic < c; ++ic) {
          const int64_t off = (static_cast<int64_t>(i) * c + ic) * hw;
          const real* dyp = dy + off;
          if (dx) {
            real* dxp = dx + off;
            for (int64_t j = 0; j < hw; ++j) dxp[j] += dyp[j] * g[j];
          }
          if (dg) {
            const real* xp = xc.data() + off;
            real* dgp = dg + i * hw;
            for (int64_t j = 0; j < hw; ++j) dgp[j] += dyp[j] * xp[j];
          }
        }
      }
    });
  }
  return y;
}

Tensor add_channel(Tape& tape, const Tensor& x, const Tensor& bias) {
  ADD_CHECK_ARG(x.rank() == 4 && bias.rank() == 4 && bias.dim(1) == 1 &&
                    bias.dim(0) == x.dim(0) && bias.dim(2) == x.dim(2) &&
                    bias.dim(3) == x.dim(3),
                "add_channel expects x [N,C,H,W] and operand [N,1,H,W]; got %s and %s",
                shape_str(x.shape()).c_str(), shape_str(bias.shape()).c_str());
  const int n = x.dim(0), c = x.dim(1);
  const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  Tensor y = Tensor::empty(x.shape());
  for (int i = 0; i < n; ++i) {
    const real* g = bias.data() + i * hw;
    for (int ic = 0; ic < c; ++ic) {
      const int64_t off = (static_cast<int64_t>(i) * c + ic) * hw;
      for (int64_t j = 0; j < hw; ++j) y.data()[off + j] = x.data()[off + j] + g[j];
    }
  }
  if (tape.enabled() && (x.participates() || bias.participates())) {
    y.mark_participating();
    Tensor xc = x, bc = bias, yc = y;
    tape.record([xc, bc, yc, n, c, hw]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      if (xc.participates()) acc(xc.grad_acquire(), dy, static_cast<int64_t>(n) * c * hw);
      if (bc.participates()) {
        real* db = bc.grad_acquire();
        for (int i = 0; i < n; ++i)
          for (int ic = 0; ic < c; ++ic)
            acc(db + i * hw, dy + (static_cast<int64_t>(i) * c + ic) * hw, hw);
      }
    });
  }
  return y;
}

Tensor elementwise(Tape& tape, const Tensor& a, const Tensor& b, EwKind kind) {
  if (a.shape() == b.shape())
    return kind == EwKind::Add ? add(tape, a, b) : mul(tape, a, b);
  ADD_CHECK_ARG(a.rank() == 4 && b.rank() == 4 && b.dim(1) == 1,
                "elementwise operands must match exactly or broadcast a single-channel b; got %s "
                "and %s",
                shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str());
  return kind == EwKind::Add ? add_channel(tape, a, b) : mul_channel(tape, a, b);
}

Tensor concat_channels(Tape& tape, const std::vector<Tensor>& items) {
  ADD_CHECK_ARG(!items.empty(), "concat of zero tensors");
  const int n = items[0].dim(0), h = items[0].dim(2), w = items[0].dim(3);
  int ctot = 0;
  for (const Tensor& t : items) {
    ADD_CHECK_ARG(t.rank() == 4 && t.dim(0) == n && t.dim(2) == h && t.dim(3) == w,
                  "concat inputs must agree on [N,*,H,W]; got %s vs %s",
                  shape_str(items[0].shape()).c_str(), shape_str(t.shape()).c_str());
    ctot += t.dim(1);
  }
  const int64_t hw = static_cast<int64_t>(h) * w;
  Tensor y = Tensor::empty({n, ctot, h, w});
  for (int i = 0; i < n; ++i) {
    int64_t off = 0;
    for (const Tensor& t : items) {
      const int64_t sz = static_cast<int64_t>(t.dim(1)) * hw;
      std::memcpy(y.data() + (static_cast<int64_t>(i) * ctot) * hw + off, t.data() + i * sz,
                  sizeof(real) * static_cast<size_t>(sz));
      off += sz;
    }
  }
  if (tape.enabled() && any_participates(items)) {
    y.mark_participating();
    std::vector<Tensor> ic = items;
    Tensor yc = y;
    tape.record([ic, yc, n, ctot, hw]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      for (int i = 0; i < n; ++i) {
        int64_t off = 0;
        for (Tensor& t : ic) {
          const int64_t sz = static_cast<int64_t>(t.dim(1)) * hw;
          if (t.participates())
            acc(t.grad_acquire() + i * sz, dy + (static_cast<int64_t>(i) * ctot) * hw + off, sz);
          off += sz;
        }
      }
    });
  }
  return y;
}

Tensor softmax_rows(Tape& tape, const Tensor& x) {
  ADD_CHECK_ARG(x.rank() == 2, "softmax_rows expects [R,C], got %s", shape_str(x.shape()).c_str());
  const int r = x.dim(0), c = x.dim(1);
  Tensor y = Tensor::empty(x.shape());
  for (int i = 0; i < r; ++i) {
    const real* p = x.data() + static_cast<size_t>(i) * c;
    real* q = y.data() + static_cast<size_t>(i) * c;
    real mx = p[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, p[j]);
    double s = 0;
    for (int j = 0; j < c; ++j) {
      q[j] = std::exp(p[j] - mx);
      s += q[j];
    }
    const real inv = static_cast<real>(1.0 / s);
    for (int j = 0; j < c; ++j) q[j] *= inv;
  }
  if (tape.enabled() && x.participates()) {
    y.mark_participating();
    Tensor xc = x, yc = y;
    tape.record([xc, yc, r, c]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      real* dx = xc.grad_acquire();
      for (int i = 0; i < r; ++i) {
        const real* yv = yc.data() + static_cast<size_t>(i) * c;
        const real* dyp = dy + static_cast<size_t>(i) * c;
        double dot = 0;
        for (int j = 0; j < c; ++j) dot += static_cast<double>(dyp[j]) * yv[j];
        real* dxp = dx + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j)
          dxp[j] += yv[j] * (dyp[j] - static_cast<real>(dot));
      }
    });
  }
  return y;
}

Tensor row(Tape& tape, const Tensor& m, int r) {
  ADD_CHECK_ARG(m.rank() == 2, "row expects [R,C], got %s", shape_str(m.shape()).c_str());
  ADD_CHECK_ARG(r >= 0 && r < m.dim(0), "row %d out of range [0,%lld)", r,
                static_cast<long long>(m.dim(0)));
  const int c = static_cast<int>(m.dim(1));
  Tensor y = Tensor::empty({c});
  std::memcpy(y.data(), m.data() + static_cast<size_t>(r) * c, sizeof(real) * c);
  if (tape.enabled() && m.participates()) {
    y.mark_participating();
    Tensor mc = m, yc = y;
    tape.record([mc, yc, r, c]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      real* dm = mc.grad_acquire() + static_cast<size_t>(r) * c;
      for (int j = 0; j < c; ++j) dm[j] += dy[j];
    });
  }
  return y;
}

Tensor weighted_sum(Tape& tape, const std::vector<Tensor>& items, const Tensor& weights,
                    const std::vector<int>& index) {
  ADD_CHECK_ARG(!items.empty() && items.size() == index.size(),
                "weighted_sum needs one index per item (%zu items, %zu indices)", items.size(),
                index.size());
  const Shape& shape = items[0].shape();
  const int64_t n = items[0].numel();
  for (const Tensor& t : items)
    ADD_CHECK_ARG(t.shape() == shape, "weighted_sum shape mismatch: %s vs %s",
                  shape_str(shape).c_str(), shape_str(t.shape()).c_str());
  for (int ix : index)
    ADD_CHECK_ARG(ix >= 0 && ix < weights.numel(), "weighted_sum index %d out of range [0,%lld)",
                  ix, static_cast<long long>(weights.numel()));
  Tensor y = Tensor::zeros(shape);
  for (size_t j = 0; j < items.size(); ++j)
    axpy(y.data(), items[j].data(), weights.data()[index[j]], n);
  if (tape.enabled() && (any_participates(items) || weights.participates())) {
    y.mark_participating();
    std::vector<Tensor> ic = items;
    Tensor wc = weights, yc = y;
    std::vector<int> ixc = index;
    tape.record([ic, wc, yc, ixc, n]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      real* dw = wc.participates() ? wc.grad_acquire() : nullptr;
      for (size_t j = 0; j < ic.size(); ++j) {
        if (ic[j].participates())
          axpy(ic[j].grad_acquire(), dy, wc.data()[ixc[j]], n);
        if (dw) dw[ixc[j]] += kern::dot(dy, ic[j].data(), static_cast<int>(n));
      }
    });
  }
  return y;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& labels) {
  ADD_CHECK_ARG(logits.rank() == 2, "cross_entropy expects logits [N,K], got %s",
                shape_str(logits.shape()).c_str());
  const int n = logits.dim(0), k = logits.dim(1);
  ADD_CHECK_ARG(static_cast<int>(labels.size()) == n, "cross_entropy: %zu labels for %d rows",
                labels.size(), n);
  std::vector<real> probs(static_cast<size_t>(n) * k);
  double loss = 0;
  for (int i = 0; i < n; ++i) {
    const int lab = labels[static_cast<size_t>(i)];
    ADD_CHECK_ARG(lab >= 0 && lab < k, "label %d out of range [0,%d)", lab, k);
    const real* p = logits.data() + static_cast<size_t>(i) * k;
    real* q = probs.data() + static_cast<size_t>(i) * k;
    real mx = p[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, p[j]);
    double s = 0;
    for (int j = 0; j < k; ++j) {
      q[j] = std::exp(p[j] - mx);
      s += q[j];
    }
    loss -= (static_cast<double>(p[lab]) - mx) - std::log(s);
    const real inv = static_cast<real>(1.0 / s);
    for (int j = 0; j < k; ++j) q[j] *= inv;
  }
  Tensor y = Tensor::scalar(static_cast<real>(loss / n));
  if (tape.enabled() && logits.participates()) {
    y.mark_participating();
    Tensor lc = logits, yc = y;
    auto pc = std::move(probs);
    auto labc = labels;
    tape.record([lc, yc, pc, labc, n, k]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      real* dl = lc.grad_acquire();
      const real g = dy[0] / static_cast<real>(n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
          dl[static_cast<size_t>(i) * k + j] +=
              g * (pc[static_cast<size_t>(i) * k + j] -
                   (j == labc[static_cast<size_t>(i)] ? real(1) : real(0)));
    });
  }
  return y;
}

Tensor mse(Tape& tape, const Tensor& pred, const Tensor& target) {
  ADD_CHECK_ARG(pred.shape() == target.shape(), "mse shape mismatch: %s vs %s",
                shape_str(pred.shape()).c_str(), shape_str(target.shape()).c_str());
  const int64_t n = pred.numel();
  double s = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred.data()[i]) - target.data()[i];
    s += d * d;
  }
  Tensor y = Tensor::scalar(static_cast<real>(s / static_cast<double>(n)));
  if (tape.enabled() && pred.participates()) {
    y.mark_participating();
    Tensor pc = pred, tc = target, yc = y;
    tape.record([pc, tc, yc, n]() mutable {
      const real* dy = yc.grad();
      if (!dy) return;
      real* dp = pc.grad_acquire();
      const real g = 2 * dy[0] / static_cast<real>(n);
      for (int64_t i = 0; i < n; ++i) dp[i] += g * (pc.data()[i] - tc.data()[i]);
    });
  }
  return y;
}

}  // namespace ops
}  // namespace add
