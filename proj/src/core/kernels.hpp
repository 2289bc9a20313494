#pragma once

// Raw compute kernels behind the autodiff layer. Everything here operates on
// plain pointers with explicit dimensions (NCHW layout) and has no notion of
// gradients or tapes, so each kernel can be tested against a naive oracle in
// isolation.
//
// Convolution geometry throughout: "same"-style zero padding supplied by the
// caller, square kernels, square strides. Output size for any path is
//   out = (in + 2*pad - dilation*(k-1) - 1) / stride + 1.

#include <cstdint>

#include "common.hpp"

namespace add::kern {

// Force single-threaded BLAS. Called once from the first GEMM; safe to call
// repeatedly.
void init_blas_single_thread();

// C[M,N] = alpha * op(A) * op(B) + beta * C, row-major.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, real alpha, const real* a, int lda,
          const real* b, int ldb, real beta, real* c, int ldc);

// Deterministic vector dot: 8 independent accumulator lanes summed in a fixed
// order. Vectorizes without -ffast-math.
real dot(const real* a, const real* b, int n);

// Copy one sample [C,H,W] into a zero-padded [C,H+2p,W+2p] buffer.
void pad_copy(const real* x, int c, int h, int w, int pad, real* xp);

// Stride-1 direct convolution on a pre-padded sample.
//   xp: [Cin, Hp, Wp], w: [Cout, Cin, k, k], y: [Cout, Ho, Wo]
// Requires Hp >= Ho + dil*(k-1) and Wp >= Wo + dil*(k-1).
// Accumulates in register tiles of four output channels across a full row.
void conv_s1(const real* xp, int cin, int hp, int wp, const real* w, int cout, int k, int dil,
             real* y, int ho, int wo);

// Weight gradient for the stride-1 path:
//   dw[oc,ic,ky,kx] += sum_oh dot(dy[oc,oh,:], xp[ic, oh+ky*dil, kx*dil:+Wo])
void conv_s1_dw_acc(const real* xp, int cin, int hp, int wp, const real* dy, int cout, int k,
                    int dil, real* dw, int ho, int wo);

// Depthwise convolution on a pre-padded sample, any stride.
//   xp: [C, Hp, Wp], w: [C, k, k], y: [C, Ho, Wo]
void dwconv(const real* xp, int c, int hp, int wp, const real* w, int k, int stride, int dil,
            real* y, int ho, int wo);

// Depthwise backward: scatter dy back to dx (unpadded coordinates) and
// accumulate dw. Either output pointer may be null to skip that half.
void dwconv_bwd(const real* x, real* dx, int c, int h, int w, const real* wgt, real* dw, int k,
                int stride, int dil, int pad, const real* dy, int ho, int wo);

// im2col for one sample: col is [Cin*k*k, Ho*Wo].
void im2col(const real* x, int c, int h, int w, int k, int stride, int pad, int dil, real* col,
            int ho, int wo);

// Transpose of im2col: accumulate columns back into dx [Cin,H,W].
void col2im_acc(const real* col, int c, int h, int w, int k, int stride, int pad, int dil,
                real* dx, int ho, int wo);

// kxk max pooling on one sample. argmax records the flat input index feeding
// each output element (padding never wins: pads are -inf).
void maxpool(const real* x, int c, int h, int w, int k, int stride, int pad, real* y,
             int32_t* argmax, int ho, int wo);

// kxk average pooling; padded cells are excluded from the divisor, so border
// outputs average only the cells that exist.
void avgpool(const real* x, int c, int h, int w, int k, int stride, int pad, real* y, int ho,
             int wo);
void avgpool_bwd_acc(real* dx, int c, int h, int w, int k, int stride, int pad, const real* dy,
                     int ho, int wo);

// Bilinear interpolation to (ho, wo) with align_corners=true semantics.
void bilinear(const real* x, int c, int h, int w, real* y, int ho, int wo);
void bilinear_bwd_acc(real* dx, int c, int h, int w, const real* dy, int ho, int wo);

}  // namespace add::kern
