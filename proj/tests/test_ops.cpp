#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "core/rng.hpp"
#include "core/tape.hpp"
#include "oracle.hpp"

using namespace add;
using namespace add::ops;

namespace {

std::vector<real> randu(Rng& rng, int64_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<real> v(static_cast<size_t>(n));
  for (real& x : v) x = static_cast<real>(rng.uniform(lo, hi));
  return v;
}

void check_close(const Tensor& got, const std::vector<real>& want, double tol) {
  REQUIRE(got.numel() == static_cast<int64_t>(want.size()));
  for (int64_t i = 0; i < got.numel(); ++i)
    REQUIRE(static_cast<double>(got.data()[i]) ==
            doctest::Approx(static_cast<double>(want[static_cast<size_t>(i)])).epsilon(tol));
}

}  // namespace

TEST_CASE("conv2d: all-ones 3x3 counts window overlap") {
  Tape t;
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor y = conv2d(t, x, w, {.stride = 1, .padding = 1});
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.data()[4] == 9.0f);  // center
  CHECK(y.data()[0] == 4.0f);  // corner
  CHECK(y.data()[1] == 6.0f);  // edge
}

TEST_CASE("conv2d: identity kernel reproduces input") {
  Tape t;
  Rng rng(11);
  Tensor x = Tensor::from({2, 3, 5, 5}, randu(rng, 2 * 3 * 5 * 5));
  Tensor w = Tensor::zeros({3, 3, 3, 3});
  for (int oc = 0; oc < 3; ++oc) w.data()[((oc * 3 + oc) * 3 + 1) * 3 + 1] = 1.0f;
  Tensor y = conv2d(t, x, w, {.padding = 1});
  REQUIRE(y.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d: dilation-2 dense matches naive loop reference") {
  Tape t;
  Rng rng(12);
  auto xv = randu(rng, 2 * 3 * 8 * 8);
  auto wv = randu(rng, 4 * 3 * 3 * 3);
  Tensor x = Tensor::from({2, 3, 8, 8}, xv);
  Tensor w = Tensor::from({4, 3, 3, 3}, wv);
  Tensor y = conv2d(t, x, w, {.dilation = 2});  // same padding = 2
  int ho, wo;
  auto want = oracle::conv2d(xv, 2, 3, 8, 8, wv, 4, 3, 1, 2, 2, false, ho, wo);
  REQUIRE(y.shape() == Shape{2, 4, ho, wo});
  check_close(y, want, 1e-4);
}

TEST_CASE("conv2d: every execution path matches the naive reference") {
  Rng rng(13);
  struct Cfg {
    int cin, cout, h, w, k, stride, dil;
    bool depthwise;
  };
  const Cfg cfgs[] = {
      {3, 4, 8, 8, 3, 1, 1, false},  // tiled direct
      {2, 4, 9, 7, 5, 1, 1, false},  // tiled direct, k=5, odd sizes
      {2, 3, 8, 8, 7, 1, 2, false},  // tiled direct, k=7 dil 2
      {5, 2, 6, 6, 1, 1, 1, false},  // 1x1 GEMM
      {3, 4, 8, 8, 3, 2, 1, false},  // strided im2col
      {3, 2, 7, 9, 5, 2, 2, false},  // strided im2col, dil 2
      {4, 2, 8, 8, 1, 2, 1, false},  // strided 1x1
      {3, 3, 8, 8, 3, 1, 1, true},   // depthwise s1
      {4, 4, 8, 8, 3, 2, 2, true},   // depthwise s2 dil 2
      {2, 2, 9, 9, 5, 1, 2, true},   // depthwise k5 dil 2
  };
  for (const Cfg& c : cfgs) {
    CAPTURE(c.cin);
    CAPTURE(c.k);
    CAPTURE(c.stride);
    CAPTURE(c.depthwise);
    const int n = 2;
    auto xv = randu(rng, static_cast<int64_t>(n) * c.cin * c.h * c.w);
    auto wv = randu(rng, static_cast<int64_t>(c.cout) * (c.depthwise ? 1 : c.cin) * c.k * c.k);
    Tensor x = Tensor::from({n, c.cin, c.h, c.w}, xv);
    Tensor w = Tensor::from({c.cout, c.depthwise ? 1 : c.cin, c.k, c.k}, wv);
    Tape t;
    Tensor y = conv2d(t, x, w,
                      {.stride = c.stride,
                       .dilation = c.dil,
                       .groups = c.depthwise ? c.cin : 1});
    int ho, wo;
    auto want = oracle::conv2d(xv, n, c.cin, c.h, c.w, wv, c.cout, c.k, c.stride,
                               c.dil * (c.k - 1) / 2, c.dil, c.depthwise, ho, wo);
    REQUIRE(y.shape() == Shape{n, c.cout, ho, wo});
    check_close(y, want, 5e-4);
  }
}

TEST_CASE("conv2d: grouped convolution equals dense convolutions on channel halves") {
  Rng rng(14);
  const int n = 2, cin = 6, cout = 4, h = 7, w = 7, k = 3;
  auto xv = randu(rng, static_cast<int64_t>(n) * cin * h * w);
  auto wv = randu(rng, static_cast<int64_t>(cout) * (cin / 2) * k * k);
  Tensor x = Tensor::from({n, cin, h, w}, xv);
  Tensor w2 = Tensor::from({cout, cin / 2, k, k}, wv);
  Tape t;
  Tensor y = conv2d(t, x, w2, {.groups = 2});

  // Reference: split channels, run two dense convs, stack outputs.
  for (int g = 0; g < 2; ++g) {
    std::vector<real> xg, wg;
    for (int i = 0; i < n; ++i)
      for (int c = g * 3; c < g * 3 + 3; ++c)
        for (int j = 0; j < h * w; ++j) xg.push_back(xv[(i * cin + c) * h * w + j]);
    for (int oc = g * 2; oc < g * 2 + 2; ++oc)
      for (int64_t j = 0; j < 3 * k * k; ++j) wg.push_back(wv[oc * 3 * k * k + j]);
    int ho, wo;
    auto want = oracle::conv2d(xg, n, 3, h, w, wg, 2, k, 1, 1, 1, false, ho, wo);
    for (int i = 0; i < n; ++i)
      for (int oc = 0; oc < 2; ++oc)
        for (int64_t j = 0; j < ho * wo; ++j)
          REQUIRE(y.data()[((i * cout) + g * 2 + oc) * ho * wo + j] ==
                  doctest::Approx(want[(i * 2 + oc) * ho * wo + j]).epsilon(1e-4));
  }
}

TEST_CASE("conv2d errors: bad groups and shape mismatches") {
  Tape t;
  Tensor x = Tensor::zeros({1, 4, 6, 6});
  CHECK_THROWS_AS(conv2d(t, x, Tensor::zeros({4, 3, 3, 3}), ConvSpec{}), Error);
  CHECK_THROWS_AS(conv2d(t, x, Tensor::zeros({4, 4, 2, 2}), ConvSpec{}), Error);  // even kernel
  try {
    conv2d(t, x, Tensor::zeros({4, 2, 3, 3}), ConvSpec{.groups = 3});
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Config);
  }
}

TEST_CASE("pool2d: constant input is preserved by average pooling everywhere") {
  Tape t;
  Tensor x = Tensor::full({1, 2, 6, 6}, 3.25f);
  Tensor y = avg_pool3(t, x, 1);
  REQUIRE(y.shape() == x.shape());
  for (int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.data()[i] == 3.25f);
  Tensor y2 = avg_pool3(t, x, 2);
  for (int64_t i = 0; i < y2.numel(); ++i) REQUIRE(y2.data()[i] == 3.25f);
}

TEST_CASE("pool2d: max-pool gradient routes entirely to a single spike") {
  Tape t;
  Tensor x = Tensor::zeros({1, 1, 5, 5});
  x.set_requires_grad();
  x.data()[2 * 5 + 2] = 10.0f;  // center spike
  Tensor y = max_pool3(t, x, 1);
  Tensor loss = sum_all(t, y);
  t.backward(loss);
  // The spike wins every window that contains it: 3x3 = 9 windows.
  CHECK(x.grad()[2 * 5 + 2] == 9.0f);
  // Every window routes exactly one unit of gradient somewhere.
  double total = 0;
  for (int i = 0; i < 25; ++i) total += x.grad()[i];
  CHECK(total == 25.0);
}

TEST_CASE("pool2d: random inputs match loop reference, stride 2") {
  Rng rng(15);
  auto xv = randu(rng, 2 * 5 * 5);
  Tensor x = Tensor::from({1, 2, 5, 5}, xv);
  Tape t;
  int ho, wo;
  auto want_max = oracle::maxpool3(xv, 1, 2, 5, 5, 2, ho, wo);
  Tensor ym = max_pool3(t, x, 2);
  REQUIRE(ym.shape() == Shape{1, 2, ho, wo});
  check_close(ym, want_max, 1e-6);
  auto want_avg = oracle::avgpool3(xv, 1, 2, 5, 5, 2, ho, wo);
  Tensor ya = avg_pool3(t, x, 2);
  check_close(ya, want_avg, 1e-6);
}

TEST_CASE("pool2d: window larger than padded input is an error") {
  Tape t;
  Tensor x = Tensor::zeros({1, 1, 2, 2});
  CHECK_THROWS_AS(pool2d(t, x, PoolKind::Max, 5, 1, 1), Error);
  CHECK_NOTHROW(pool2d(t, x, PoolKind::Max, 3, 1, 1));
}

TEST_CASE("linear: identity weight and zero bias reproduce the input") {
  Tape t;
  Rng rng(16);
  Tensor x = Tensor::from({3, 4}, randu(rng, 12));
  Tensor w = Tensor::zeros({4, 4});
  for (int i = 0; i < 4; ++i) w.data()[i * 4 + i] = 1.0f;
  Tensor b = Tensor::zeros({4});
  Tensor y = linear(t, x, w, b);
  for (int64_t i = 0; i < 12; ++i) REQUIRE(y.data()[i] == x.data()[i]);
}

TEST_CASE("linear: zero weight broadcasts the bias; random case matches loops") {
  Tape t;
  Rng rng(17);
  Tensor x = Tensor::from({3, 4}, randu(rng, 12));
  Tensor w0 = Tensor::zeros({4, 2});
  Tensor b = Tensor::from({2}, {1.5f, -2.0f});
  Tensor yb = linear(t, x, w0, b);
  for (int i = 0; i < 3; ++i) {
    REQUIRE(yb.data()[i * 2 + 0] == 1.5f);
    REQUIRE(yb.data()[i * 2 + 1] == -2.0f);
  }

  auto wv = randu(rng, 8);
  Tensor w = Tensor::from({4, 2}, wv);
  Tensor y = linear(t, x, w, b);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double s = b.data()[j];
      for (int d = 0; d < 4; ++d) s += static_cast<double>(x.data()[i * 4 + d]) * wv[d * 2 + j];
      REQUIRE(y.data()[i * 2 + j] == doctest::Approx(s).epsilon(1e-5));
    }
  CHECK_THROWS_AS(linear(t, x, Tensor::zeros({5, 2}), b), Error);
}

TEST_CASE("bilinear_upsample: constants, the 2x2->3x3 center, and the loop reference") {
  Tape t;
  Tensor c = Tensor::full({2, 1, 3, 3}, 4.5f);
  Tensor yc = bilinear_upsample(t, c, 7, 5);
  for (int64_t i = 0; i < yc.numel(); ++i) REQUIRE(yc.data()[i] == doctest::Approx(4.5).epsilon(1e-6));

  Tensor x = Tensor::from({1, 1, 2, 2}, {0, 1, 2, 3});
  Tensor y = bilinear_upsample(t, x, 3, 3);
  const real want[9] = {0, 0.5f, 1, 1, 1.5f, 2, 2, 2.5f, 3};
  for (int i = 0; i < 9; ++i) REQUIRE(y.data()[i] == doctest::Approx(want[i]).epsilon(1e-6));
  CHECK(y.data()[4] == doctest::Approx(1.5).epsilon(1e-6));  // center

  Rng rng(18);
  auto xv = randu(rng, 2 * 1 * 3 * 4);
  Tensor r = Tensor::from({2, 1, 3, 4}, xv);
  Tensor yr = bilinear_upsample(t, r, 7, 9);
  auto want_r = oracle::bilinear(xv, 2, 1, 3, 4, 7, 9);
  check_close(yr, want_r, 1e-5);

  CHECK_THROWS_AS(bilinear_upsample(t, x, 0, 3), Error);
}

TEST_CASE("bilinear_upsample: gradient of sum is a partition of unity") {
  Tape t;
  Tensor x = Tensor::from({1, 1, 2, 2}, {0, 1, 2, 3});
  x.set_requires_grad();
  Tensor y = bilinear_upsample(t, x, 6, 5);
  Tensor loss = sum_all(t, y);
  t.backward(loss);
  double s = 0;
  for (int i = 0; i < 4; ++i) s += x.grad()[i];
  CHECK(s == doctest::Approx(6.0 * 5.0).epsilon(1e-5));
}

TEST_CASE("elementwise: identities, broadcast semantics, and shape errors") {
  Tape t;
  Rng rng(19);
  auto av = randu(rng, 2 * 2 * 4 * 4);
  Tensor a = Tensor::from({2, 2, 4, 4}, av);

  Tensor zero = Tensor::zeros({2, 2, 4, 4});
  Tensor one = Tensor::full({2, 2, 4, 4}, 1.0f);
  Tensor ya = elementwise(t, a, zero, EwKind::Add);
  Tensor ym = elementwise(t, a, one, EwKind::Mul);
  for (int64_t i = 0; i < a.numel(); ++i) {
    REQUIRE(ya.data()[i] == a.data()[i]);
    REQUIRE(ym.data()[i] == a.data()[i]);
  }

  auto mv = randu(rng, 4 * 4);
  Tensor m = Tensor::from({1, 1, 4, 4}, mv);
  Tensor f = Tensor::from({1, 2, 4, 4}, randu(rng, 2 * 4 * 4));
  Tensor yb = elementwise(t, f, m, EwKind::Mul);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 16; ++i)
      REQUIRE(yb.data()[c * 16 + i] == doctest::Approx(f.data()[c * 16 + i] * mv[i]));

  Tensor yc = elementwise(t, f, m, EwKind::Add);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 16; ++i)
      REQUIRE(yc.data()[c * 16 + i] == doctest::Approx(f.data()[c * 16 + i] + mv[i]));

  CHECK_THROWS_AS(elementwise(t, a, Tensor::zeros({2, 2, 4, 5}), EwKind::Add), Error);
  CHECK_THROWS_AS(elementwise(t, a, Tensor::zeros({2, 3, 4, 4}), EwKind::Mul), Error);
}

TEST_CASE("elementwise: broadcast gradient is channel-summed") {
  Tape t;
  Rng rng(20);
  Tensor f = Tensor::from({1, 3, 2, 2}, randu(rng, 12));
  Tensor m = Tensor::full({1, 1, 2, 2}, 2.0f);
  m.set_requires_grad();
  f.set_requires_grad();
  Tensor y = elementwise(t, f, m, EwKind::Add);
  Tensor loss = sum_all(t, y);
  t.backward(loss);
  for (int i = 0; i < 4; ++i) CHECK(m.grad()[i] == 3.0f);  // one per channel
  for (int i = 0; i < 12; ++i) CHECK(f.grad()[i] == 1.0f);
}

TEST_CASE("batch_norm: normalization, beta shift, running statistics") {
  Tape t;
  Rng rng(21);
  const int n = 4, c = 3, h = 5, w = 5;
  // Build an input that is already zero-mean unit-variance per channel.
  std::vector<real> xv(static_cast<size_t>(n) * c * h * w);
  for (int ic = 0; ic < c; ++ic) {
    double s = 0, s2 = 0;
    std::vector<double> raw(static_cast<size_t>(n) * h * w);
    for (double& v : raw) {
      v = rng.normal();
      s += v;
    }
    const double mean = s / raw.size();
    for (double& v : raw) {
      v -= mean;
      s2 += v * v;
    }
    const double sd = std::sqrt(s2 / raw.size());
    size_t j = 0;
    for (int i = 0; i < n; ++i)
      for (int p = 0; p < h * w; ++p)
        xv[(static_cast<size_t>(i) * c + ic) * h * w + p] = static_cast<real>(raw[j++] / sd);
  }
  Tensor x = Tensor::from({n, c, h, w}, xv);
  Tensor gamma = Tensor::full({c}, 1.0f), beta = Tensor::zeros({c});
  Tensor rm = Tensor::zeros({c}), rv = Tensor::full({c}, 1.0f);
  Tensor y = batch_norm(t, x, gamma, beta, rm, rv, true);
  for (int64_t i = 0; i < x.numel(); ++i)
    REQUIRE(std::abs(y.data()[i] - x.data()[i]) < 1e-4);

  // Beta shift: per-channel output mean equals beta in train mode.
  Tensor beta2 = Tensor::from({c}, {1.0f, -2.0f, 0.5f});
  Tensor rm2 = Tensor::zeros({c}), rv2 = Tensor::full({c}, 1.0f);
  Tensor x2 = Tensor::from({n, c, h, w}, randu(rng, static_cast<int64_t>(n) * c * h * w, -3, 5));
  Tensor y2 = batch_norm(t, x2, gamma, beta2, rm2, rv2, true);
  for (int ic = 0; ic < c; ++ic) {
    double s = 0;
    for (int i = 0; i < n; ++i)
      for (int p = 0; p < h * w; ++p) s += y2.data()[(static_cast<size_t>(i) * c + ic) * h * w + p];
    CHECK(s / (n * h * w) == doctest::Approx(beta2.data()[ic]).epsilon(1e-4));
  }

  // Running stats move by momentum 0.1 toward the batch statistics.
  for (int ic = 0; ic < c; ++ic) {
    double s = 0;
    for (int i = 0; i < n; ++i)
      for (int p = 0; p < h * w; ++p) s += x2.data()[(static_cast<size_t>(i) * c + ic) * h * w + p];
    const double mu = s / (n * h * w);
    CHECK(rm2.data()[ic] == doctest::Approx(0.9 * 0.0 + 0.1 * mu).epsilon(1e-4));
  }

  // Eval mode uses the running statistics, not batch ones.
  Tensor rm3 = Tensor::from({c}, {1.0f, 1.0f, 1.0f});
  Tensor rv3 = Tensor::full({c}, 4.0f);
  Tensor ones = Tensor::full({n, c, h, w}, 1.0f);
  Tensor y3 = batch_norm(t, ones, gamma, beta, rm3, rv3, false);
  for (int64_t i = 0; i < y3.numel(); ++i)
    REQUIRE(y3.data()[i] == doctest::Approx(0.0).epsilon(1e-5));

  // Train mode with a single element is rejected.
  Tensor tiny = Tensor::zeros({1, c, 1, 1});
  CHECK_THROWS_AS(batch_norm(t, tiny, gamma, beta, rm3, rv3, true), Error);
}

TEST_CASE("softmax: uniformity, shift invariance, the ln2 example") {
  Tape t;
  Tensor x = Tensor::full({2, 5}, 3.0f);
  Tensor y = softmax_rows(t, x);
  for (int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.data()[i] == doctest::Approx(0.2).epsilon(1e-6));

  Rng rng(22);
  auto xv = randu(rng, 3 * 7, -4, 4);
  Tensor a = Tensor::from({3, 7}, xv);
  for (real& v : xv) v += 11.5f;
  Tensor b = Tensor::from({3, 7}, xv);
  Tensor ya = softmax_rows(t, a), yb = softmax_rows(t, b);
  for (int64_t i = 0; i < ya.numel(); ++i)
    REQUIRE(ya.data()[i] == doctest::Approx(yb.data()[i]).epsilon(1e-5));
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int j = 0; j < 7; ++j) {
      const real v = ya.data()[r * 7 + j];
      REQUIRE(v > 0.0f);
      REQUIRE(v < 1.0f);
      s += v;
    }
    REQUIRE(s == doctest::Approx(1.0).epsilon(1e-6));
  }

  Tensor l = Tensor::from({1, 2}, {static_cast<real>(std::log(2.0)), 0.0f});
  Tensor yl = softmax_rows(t, l);
  CHECK(yl.data()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
  CHECK(yl.data()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("backward: sum and square gradients, accumulation, error cases") {
  Rng rng(23);
  auto xv = randu(rng, 12);
  {
    Tape t;
    Tensor x = Tensor::from({3, 4}, xv);
    x.set_requires_grad();
    Tensor loss = sum_all(t, x);
    t.backward(loss);
    for (int i = 0; i < 12; ++i) REQUIRE(x.grad()[i] == 1.0f);
  }
  {
    Tape t;
    Tensor x = Tensor::from({3, 4}, xv);
    x.set_requires_grad();
    Tensor loss = sum_all(t, mul(t, x, x));
    t.backward(loss);
    for (int i = 0; i < 12; ++i)
      REQUIRE(x.grad()[i] == doctest::Approx(2.0 * xv[i]).epsilon(1e-6));
  }
  {
    // Two passes accumulate; zero_grad resets.
    Tensor x = Tensor::from({3, 4}, xv);
    x.set_requires_grad();
    for (int pass = 0; pass < 2; ++pass) {
      Tape t;
      Tensor loss = sum_all(t, x);
      t.backward(loss);
    }
    for (int i = 0; i < 12; ++i) REQUIRE(x.grad()[i] == 2.0f);
    x.zero_grad();
    for (int i = 0; i < 12; ++i) REQUIRE(x.grad()[i] == 0.0f);
  }
  {
    Tape t;
    Tensor x = Tensor::from({3, 4}, xv);
    x.set_requires_grad();
    Tensor y = mul(t, x, x);
    CHECK_THROWS_AS(t.backward(y), Error);  // non-scalar loss
  }
  {
    Tape t;
    Tensor x = Tensor::from({1}, {2.0f});  // no requires_grad: detached
    Tensor y = sum_all(t, x);
    CHECK_THROWS_AS(t.backward(y), Error);
  }
}

TEST_CASE("weighted_sum blends items under selected weights") {
  Tape t;
  Tensor t1 = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor t2 = Tensor::from({2, 2}, {10, 20, 30, 40});
  Tensor w = Tensor::from({3}, {0.5f, 99.0f, 2.0f});
  Tensor y = weighted_sum(t, {t1, t2}, w, {0, 2});
  const real want[4] = {20.5f, 41.0f, 61.5f, 82.0f};
  for (int i = 0; i < 4; ++i) REQUIRE(y.data()[i] == doctest::Approx(want[i]).epsilon(1e-6));

  // Gradient to the weights is <dy, item>; unused weight entries get none.
  Tensor w2 = Tensor::from({3}, {0.5f, 99.0f, 2.0f});
  w2.set_requires_grad();
  Tape t2p;
  Tensor y2 = weighted_sum(t2p, {t1, t2}, w2, {0, 2});
  Tensor loss = sum_all(t2p, y2);
  t2p.backward(loss);
  CHECK(w2.grad()[0] == doctest::Approx(1 + 2 + 3 + 4).epsilon(1e-6));
  CHECK(w2.grad()[1] == 0.0f);
  CHECK(w2.grad()[2] == doctest::Approx(10 + 20 + 30 + 40).epsilon(1e-6));
}

TEST_CASE("concat_channels layout and backward slicing") {
  Tape t;
  Tensor a = Tensor::full({2, 1, 2, 2}, 1.0f);
  Tensor b = Tensor::full({2, 2, 2, 2}, 2.0f);
  a.set_requires_grad();
  Tensor y = concat_channels(t, {a, b});
  REQUIRE(y.shape() == Shape{2, 3, 2, 2});
  // Sample 0: channel 0 from a, channels 1-2 from b; same for sample 1.
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 4; ++j) REQUIRE(y.data()[i * 12 + j] == 1.0f);
    for (int j = 4; j < 12; ++j) REQUIRE(y.data()[i * 12 + j] == 2.0f);
  }
  Tensor loss = sum_all(t, y);
  t.backward(loss);
  for (int i = 0; i < 8; ++i) REQUIRE(a.grad()[i] == 1.0f);
}

TEST_CASE("cross_entropy values and gradient structure") {
  Tape t;
  Tensor l0 = Tensor::from({1, 2}, {0, 0});
  CHECK(cross_entropy(t, l0, {1}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

  Tensor l1 = Tensor::from({1, 2}, {2, 0});
  CHECK(cross_entropy(t, l1, {0}).item() ==
        doctest::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-6));

  // Gradient = (softmax - onehot) / N.
  Tensor l2 = Tensor::from({2, 2}, {1, -1, 0.5f, 2});
  l2.set_requires_grad();
  Tape t2;
  Tensor loss = cross_entropy(t2, l2, {0, 1});
  t2.backward(loss);
  auto p = [&](int i, int j) {
    const double a = std::exp(l2.data()[i * 2 + 0]);
    const double b = std::exp(l2.data()[i * 2 + 1]);
    return (j == 0 ? a : b) / (a + b);
  };
  CHECK(l2.grad()[0] == doctest::Approx((p(0, 0) - 1) / 2).epsilon(1e-5));
  CHECK(l2.grad()[1] == doctest::Approx(p(0, 1) / 2).epsilon(1e-5));
  CHECK(l2.grad()[2] == doctest::Approx(p(1, 0) / 2).epsilon(1e-5));
  CHECK(l2.grad()[3] == doctest::Approx((p(1, 1) - 1) / 2).epsilon(1e-5));

  CHECK_THROWS_AS(cross_entropy(t, l0, {2}), Error);   // label out of range
  CHECK_THROWS_AS(cross_entropy(t, l0, {0, 1}), Error);  // label count mismatch
}

TEST_CASE("mse value and gradient") {
  Tape t;
  Tensor p = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor q = Tensor::from({2, 2}, {1, 0, 3, 1});
  CHECK(mse(t, p, q).item() == doctest::Approx((0 + 4 + 0 + 9) / 4.0).epsilon(1e-6));

  p.set_requires_grad();
  Tape t2;
  Tensor loss = mse(t2, p, q);
  t2.backward(loss);
  CHECK(p.grad()[1] == doctest::Approx(2.0 * 2 / 4).epsilon(1e-6));
  CHECK(p.grad()[3] == doctest::Approx(2.0 * 3 / 4).epsilon(1e-6));
}

TEST_CASE("global_avg_pool, relu, sigmoid basics") {
  Tape t;
  Tensor x = Tensor::from({1, 2, 2, 2}, {1, 2, 3, 4, -1, -2, -3, -4});
  Tensor g = global_avg_pool(t, x);
  REQUIRE(g.shape() == Shape{1, 2});
  CHECK(g.data()[0] == doctest::Approx(2.5));
  CHECK(g.data()[1] == doctest::Approx(-2.5));

  Tensor r = relu(t, x);
  CHECK(r.data()[0] == 1.0f);
  CHECK(r.data()[4] == 0.0f);

  Tensor s = sigmoid(t, Tensor::from({1, 3}, {0, 50, -50}));
  CHECK(s.data()[0] == doctest::Approx(0.5));
  CHECK(s.data()[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.data()[2] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(s.all_finite());
}

TEST_CASE("determinism: identical graph runs produce bit-identical outputs and grads") {
  auto run = [&](std::vector<real>& out, std::vector<real>& grads) {
    Rng rng(31);
    Tensor x = Tensor::from({2, 3, 8, 8}, randu(rng, 2 * 3 * 8 * 8));
    Tensor w = Tensor::from({4, 3, 3, 3}, randu(rng, 4 * 3 * 3 * 3, -0.4, 0.4));
    w.set_requires_grad();
    Tensor fw = Tensor::from({4, 2}, randu(rng, 8));
    fw.set_requires_grad();
    Tape t;
    Tensor y = conv2d(t, x, w, ConvSpec{});
    y = relu(t, y);
    y = max_pool3(t, y, 2);
    Tensor gap = global_avg_pool(t, y);
    Tensor logits = linear(t, gap, fw, Tensor::zeros({2}));
    Tensor loss = cross_entropy(t, logits, {0, 1});
    t.backward(loss);
    out.assign(loss.data(), loss.data() + 1);
    grads.assign(w.grad(), w.grad() + w.numel());
    grads.insert(grads.end(), fw.grad(), fw.grad() + fw.numel());
  };
  std::vector<real> o1, g1, o2, g2;
  run(o1, g1);
  run(o2, g2);
  CHECK(std::memcmp(o1.data(), o2.data(), o1.size() * sizeof(real)) == 0);
  REQUIRE(g1.size() == g2.size());
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(real)) == 0);
}
