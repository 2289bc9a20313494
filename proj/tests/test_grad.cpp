#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "core/rng.hpp"
#include "core/tape.hpp"
#include "gradcheck.hpp"

using namespace add;
using namespace add::ops;

namespace {

// Values bounded away from zero so relu/max-pool kinks sit far from the
// finite-difference step.
Tensor rand_tensor(Rng& rng, Shape shape, double lo = 0.1, double hi = 1.0) {
  Tensor t = Tensor::empty(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) {
    const double mag = rng.uniform(lo, hi);
    t.data()[i] = static_cast<real>(rng.uniform() < 0.5 ? -mag : mag);
  }
  return t;
}

// Projects an op output to a scalar against fixed random coefficients, so
// every output position feeds the loss with a distinct weight (catches
// index-shift bugs that a plain sum would cancel out).
Tensor project(Tape& tape, const Tensor& y, const Tensor& r) {
  return sum_all(tape, mul(tape, y, r));
}

// Runs `make` n times with fresh seeds; each invocation must build params,
// return the loss builder, and is gradchecked at the spec tolerance.
void run_many(int n, uint64_t seed0,
              const std::function<std::pair<std::function<Tensor(Tape&)>, std::vector<Tensor>>(
                  Rng&)>& make) {
  for (int it = 0; it < n; ++it) {
    Rng rng(seed0 + static_cast<uint64_t>(it));
    auto [loss_fn, params] = make(rng);
    gradcheck::Report rep = gradcheck::run(loss_fn, params, rng);
    CAPTURE(it);
    CAPTURE(rep.norm_rel);
    CAPTURE(rep.worst_coord);
    CAPTURE(rep.dir);
    REQUIRE(rep.ok());
  }
}

}  // namespace

TEST_CASE("grad: conv2d dense stride-1 direct path") {
  run_many(20, 1000, [](Rng& rng) {
    const int n = 1 + static_cast<int>(rng.uniform_int(2));
    const int cin = 1 + static_cast<int>(rng.uniform_int(3));
    const int cout = 1 + static_cast<int>(rng.uniform_int(4));
    const int hw = 5 + static_cast<int>(rng.uniform_int(4));
    const int k = 3 + 2 * static_cast<int>(rng.uniform_int(2));  // 3 or 5
    const int dil = 1 + static_cast<int>(rng.uniform_int(2));
    Tensor x = rand_tensor(rng, {n, cin, hw, hw}).set_requires_grad();
    Tensor w = rand_tensor(rng, {cout, cin, k, k}, 0.05, 0.5).set_requires_grad();
    Tensor r = rand_tensor(rng, {n, cout, hw, hw});
    auto fn = [=](Tape& t) { return project(t, conv2d(t, x, w, {.dilation = dil}), r); };
    return std::make_pair(std::function<Tensor(Tape&)>(fn), std::vector<Tensor>{x, w});
  });
}

TEST_CASE("grad: conv2d 1x1 and strided im2col paths") {
  run_many(20, 2000, [](Rng& rng) {
    const bool one_by_one = rng.uniform() < 0.5;
    const int n = 1 + static_cast<int>(rng.uniform_int(2));
    const int cin = 1 + static_cast<int>(rng.uniform_int(4));
    const int cout = 1 + static_cast<int>(rng.uniform_int(4));
    const int hw = 6 + static_cast<int>(rng.uniform_int(3));
    const int k = one_by_one ? 1 : 3 + 2 * static_cast<int>(rng.uniform_int(2));
    const int stride = one_by_one ? 1 : 2;
    Tensor x = rand_tensor(rng, {n, cin, hw, hw}).set_requires_grad();
    Tensor w = rand_tensor(rng, {cout, cin, k, k}, 0.05, 0.5).set_requires_grad();
    Tape probe;
    Tensor y0 = conv2d(probe, x, w, {.stride = stride});
    Tensor r = rand_tensor(rng, y0.shape());
    auto fn = [=](Tape& t) { return project(t, conv2d(t, x, w, {.stride = stride}), r); };
    return std::make_pair(std::function<Tensor(Tape&)>(fn), std::vector<Tensor>{x, w});
  });
}

TEST_CASE("grad: conv2d depthwise and grouped paths") {
  run_many(20, 3000, [](Rng& rng) {
    const bool grouped = rng.uniform() < 0.4;  // else depthwise
    const int n = 1 + static_cast<int>(rng.uniform_int(2));
    const int hw = 6 + static_cast<int>(rng.uniform_int(3));
    const int k = 3 + 2 * static_cast<int>(rng.uniform_int(2));
    const int stride = 1 + static_cast<int>(rng.uniform_int(2));
    const int dil = 1 + static_cast<int>(rng.uniform_int(2));
    int cin, cout, groups, wc;
    if (grouped) {
      groups = 2;
      cin = 4, cout = 2 + 2 * static_cast<int>(rng.uniform_int(2));
      wc = cin / groups;
    } else {
      cin = cout = groups = 2 + static_cast<int>(rng.uniform_int(3));
      wc = 1;
    }
    Tensor x = rand_tensor(rng, {n, cin, hw, hw}).set_requires_grad();
    Tensor w = rand_tensor(rng, {cout, wc, k, k}, 0.05, 0.6).set_requires_grad();
    Tape probe;
    Tensor y0 = conv2d(probe, x, w, {.stride = stride, .dilation = dil, .groups = groups});
    Tensor r = rand_tensor(rng, y0.shape());
    auto fn = [=](Tape& t) {
      return project(t, conv2d(t, x, w, {.stride = stride, .dilation = dil, .groups = groups}),
                     r);
    };
    return std::make_pair(std::function<Tensor(Tape&)>(fn), std::vector<Tensor>{x, w});
  });
}

TEST_CASE("grad: linear") {
  run_many(20, 4000, [](Rng& rng) {
    const int n = 1 + static_cast<int>(rng.uniform_int(4));
    const int d = 1 + static_cast<int>(rng.uniform_int(6));
    const int k = 1 + static_cast<int>(rng.uniform_int(4));
    Tensor x = rand_tensor(rng, {n, d}).set_requires_grad();
    Tensor w = rand_tensor(rng, {d, k}, 0.1, 0.8).set_requires_grad();
    Tensor b = rand_tensor(rng, {k}).set_requires_grad();
    Tensor r = rand_tensor(rng, {n, k});
    auto fn = [=](Tape& t) { return project(t, linear(t, x, w, b), r); };
    return std::make_pair(std::function<Tensor(Tape&)>(fn), std::vector<Tensor>{x, w, b});
  });
}

TEST_CASE("grad: batch_norm training and eval modes") {
  run_many(20, 5000, [](Rng& rng) {
    const bool training = rng.uniform() < 0.7;
    const int n = 2 + static_cast<int>(rng.uniform_int(2));
    const int c = 1 + static_cast<int>(rng.uniform_int(3));
    const int hw = 3 + static_cast<int>(rng.uniform_int(3));
    Tensor x = rand_tensor(rng, {n, c, hw, hw}, 0.1, 2.0).set_requires_grad();
    Tensor gamma = rand_tensor(rng, {c}, 0.5, 1.5).set_requires_grad();
    Tensor beta = rand_tensor(rng, {c}, 0.1, 0.5).set_requires_grad();
    Tensor rm = rand_tensor(rng, {c}, 0.0, 0.3);
    Tensor rv = rand_tensor(rng, {c}, 0.5, 1.5);
    for (int i = 0; i < c; ++i) rv.data()[i] = std::abs(rv.data()[i]);
    Tensor r = rand_tensor(rng, {n, c, hw, hw});
    auto fn = [=](Tape& t) mutable {
      return project(t, batch_norm(t, x, gamma, beta, rm, rv, training), r);
    };
    return std::make_pair(std::function<Tensor(Tape&)>(fn),
                          std::vector<Tensor>{x, gamma, beta});
  });
}

TEST_CASE("grad: relu and sigmoid") {
  run_many(20, 6000, [](Rng& rng) {
    const int n = 2 + static_cast<int>(rng.uniform_int(8));
    const int m = 2 + static_cast<int>(rng.uniform_int(8));
    Tensor x = rand_tensor(rng, {n, m}, 0.05, 1.5).set_requires_grad();
    Tensor r = rand_tensor(rng, {n, m});
    const bool use_relu = rng.uniform() < 0.5;
    auto fn = [=](Tape& t) {
      return project(t, use_relu ? relu(t, x) : sigmoid(t, x), r);
    };
    return std::make_pair(std::function<Tensor(Tape&)>(fn), std::vector<Tensor>{x});
  });
}

TEST_CASE("grad: pooling, both kinds and strides") {
  run_many(20, 7000, [](Rng& rng) {
    const int n = 1 + static_cast<int>(rng.uniform_int(2));
    const int c = 1 + static_cast<int>(rng.uniform_int(2));
    const int hw = 4 + static_cast<int>(rng.uniform_int(2));
    const int stride = 1 + static_cast<int>(rng.uniform_int(2));
    const bool use_max = rng.uniform() < 0.5;
    // Distinct, well-separated values so max-pool winners never flip under
    // the finite-difference step; centered ramp keeps magnitudes small.
    std::vector<int64_t> order(static_cast<size_t>(n) * c * hw * hw);
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
    rng.shuffle(order);
    Tensor x = Tensor::empty({n, c, hw, hw});
    const double mid = 0.5 * static_cast<double>(order.size());
    for (size_t i = 0; i < order.size(); ++i)
      x.data()[i] = static_cast<real>(0.02 * (static_cast<double>(order[i]) - mid));
    x.set_requires_grad();
    Tape probe;
    Tensor y0 = pool2d(probe, x, use_max ? PoolKind::Max : PoolKind::Avg, 3, stride, 1);
    Tensor r = rand_tensor(rng, y0.shape());
    auto fn = [=](Tape& t) {
      return project(t, pool2d(t, x, use_max ? PoolKind::Max : PoolKind::Avg, 3, stride, 1), r);
    };
    return std::make_pair(std::function<Tensor(Tape&)>(fn), std::vector<Tensor>{x});
  });
}

TEST_CASE("grad: bilinear_upsample and global_avg_pool") {
  run_many(20, 8000, [](Rng& rng) {
    const int n = 1 + static_cast<int>(rng.uniform_int(2));
    const int h = 2 + static_cast<int>(rng.uniform_int(3));
    const int w = 2 + static_cast<int>(rng.uniform_int(3));
    const int ho = h + static_cast<int>(rng.uniform_int(6));
    const int wo = w + static_cast<int>(rng.uniform_int(6));
    const bool use_gap = rng.uniform() < 0.3;
    Tensor x = rand_tensor(rng, {n, 1, h, w}).set_requires_grad();
    if (use_gap) {
      Tensor r = rand_tensor(rng, {n, 1});
      auto fn = [=](Tape& t) { return project(t, global_avg_pool(t, x), r); };
      return std::make_pair(std::function<Tensor(Tape&)>(fn), std::vector<Tensor>{x});
    }
    Tensor r = rand_tensor(rng, {n, 1, ho, wo});
    auto fn = [=](Tape& t) { return project(t, bilinear_upsample(t, x, ho, wo), r); };
    return std::make_pair(std::function<Tensor(Tape&)>(fn), std::vector<Tensor>{x});
  });
}

TEST_CASE("grad: elementwise dense and channel-broadcast forms") {
  run_many(20, 9000, [](Rng& rng) {
    const int n = 1 + static_cast<int>(rng.uniform_int(2));
    const int c = 2 + static_cast<int>(rng.uniform_int(3));
    const int hw = 3 + static_cast<int>(rng.uniform_int(3));
    const int mode = static_cast<int>(rng.uniform_int(4));
    Tensor a = rand_tensor(rng, {n, c, hw, hw}).set_requires_grad();
    Tensor b = rand_tensor(rng, (mode < 2) ? Shape{n, c, hw, hw} : Shape{n, 1, hw, hw})
                   .set_requires_grad();
    Tensor r = rand_tensor(rng, {n, c, hw, hw});
    const EwKind kind = (mode % 2 == 0) ? EwKind::Add : EwKind::Mul;
    auto fn = [=](Tape& t) { return project(t, elementwise(t, a, b, kind), r); };
    return std::make_pair(std::function<Tensor(Tape&)>(fn), std::vector<Tensor>{a, b});
  });
}

TEST_CASE("grad: softmax feeding a weighted sum (the relaxation pattern)") {
  run_many(20, 10000, [](Rng& rng) {
    const int ops = 3 + static_cast<int>(rng.uniform_int(4));
    const int hw = 3 + static_cast<int>(rng.uniform_int(2));
    Tensor logits = rand_tensor(rng, {1, ops}, 0.1, 1.5).set_requires_grad();
    std::vector<Tensor> items;
    std::vector<int> index;
    std::vector<Tensor> params{logits};
    for (int j = 1; j < ops; ++j) {  // skip entry 0, as the search skips Zero
      Tensor it = rand_tensor(rng, {1, 2, hw, hw}).set_requires_grad();
      items.push_back(it);
      params.push_back(it);
      index.push_back(j);
    }
    Tensor r = rand_tensor(rng, {1, 2, hw, hw});
    auto fn = [=](Tape& t) {
      Tensor wts = softmax_rows(t, logits).reshaped({ops});
      return project(t, weighted_sum(t, items, wts, index), r);
    };
    return std::make_pair(std::function<Tensor(Tape&)>(fn), params);
  });
}

TEST_CASE("grad: concat_channels and sum") {
  run_many(20, 11000, [](Rng& rng) {
    const int n = 1 + static_cast<int>(rng.uniform_int(2));
    const int hw = 3 + static_cast<int>(rng.uniform_int(3));
    const int parts = 2 + static_cast<int>(rng.uniform_int(3));
    const bool use_concat = rng.uniform() < 0.5;
    std::vector<Tensor> items;
    std::vector<Tensor> params;
    int ctot = 0;
    for (int j = 0; j < parts; ++j) {
      const int cj = use_concat ? 1 + static_cast<int>(rng.uniform_int(2)) : 2;
      Tensor it = rand_tensor(rng, {n, cj, hw, hw}).set_requires_grad();
      items.push_back(it);
      params.push_back(it);
      ctot += cj;
    }
    Tensor r = rand_tensor(rng, {n, use_concat ? ctot : 2, hw, hw});
    auto fn = [=](Tape& t) {
      return project(t, use_concat ? concat_channels(t, items) : sum(t, items), r);
    };
    return std::make_pair(std::function<Tensor(Tape&)>(fn), params);
  });
}

TEST_CASE("grad: cross_entropy and mse") {
  run_many(20, 12000, [](Rng& rng) {
    const int n = 2 + static_cast<int>(rng.uniform_int(4));
    const bool use_ce = rng.uniform() < 0.5;
    if (use_ce) {
      const int k = 2 + static_cast<int>(rng.uniform_int(3));
      Tensor logits = rand_tensor(rng, {n, k}, 0.1, 2.0).set_requires_grad();
      std::vector<int> labels;
      for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.uniform_int(k)));
      auto fn = [=](Tape& t) { return cross_entropy(t, logits, labels); };
      return std::make_pair(std::function<Tensor(Tape&)>(fn), std::vector<Tensor>{logits});
    }
    const int hw = 3 + static_cast<int>(rng.uniform_int(4));
    Tensor pred = rand_tensor(rng, {n, 1, hw, hw}).set_requires_grad();
    Tensor target = rand_tensor(rng, {n, 1, hw, hw});
    auto fn = [=](Tape& t) { return mse(t, pred, target); };
    return std::make_pair(std::function<Tensor(Tape&)>(fn), std::vector<Tensor>{pred});
  });
}

TEST_CASE("grad: composite conv -> pool -> linear -> cross-entropy") {
  run_many(8, 13000, [](Rng& rng) {
    // Modest spatial size and healthy head weights keep gradient magnitudes
    // well above the float32 finite-difference noise floor.
    const int n = 2, cin = 2, cout = 3, hw = 6;
    Tensor x = rand_tensor(rng, {n, cin, hw, hw}, 0.2, 1.2);
    Tensor w = rand_tensor(rng, {cout, cin, 3, 3}, 0.1, 0.6).set_requires_grad();
    Tensor gamma = Tensor::full({cout}, 1.0f).set_requires_grad();
    Tensor beta = Tensor::zeros({cout}).set_requires_grad();
    Tensor rm = Tensor::zeros({cout});
    Tensor rv = Tensor::full({cout}, 1.0f);
    Tensor fw = rand_tensor(rng, {cout, 2}, 0.3, 1.0).set_requires_grad();
    Tensor fb = rand_tensor(rng, {2}).set_requires_grad();
    std::vector<int> labels{0, 1};
    // Smooth activations throughout: the point here is chaining backward
    // closures across ops, and the kinked ops (relu, max pool) have their
    // own cases with data held away from the kinks.
    auto fn = [=](Tape& t) mutable {
      Tensor y = conv2d(t, x, w, ConvSpec{});
      y = batch_norm(t, y, gamma, beta, rm, rv, true);
      y = sigmoid(t, y);
      y = avg_pool3(t, y, 2);
      Tensor gap = global_avg_pool(t, y);
      Tensor logits = linear(t, gap, fw, fb);
      return cross_entropy(t, logits, labels);
    };
    return std::make_pair(std::function<Tensor(Tape&)>(fn),
                          std::vector<Tensor>{w, gamma, beta, fw, fb});
  });
}

TEST_CASE("grad: linearity of backward over loss combination") {
  Rng rng(14000);
  Tensor x = rand_tensor(rng, {2, 3, 6, 6}, 0.1, 1.0);
  Tensor w = rand_tensor(rng, {2, 3, 3, 3}, 0.1, 0.5);
  Tensor r1 = rand_tensor(rng, {2, 2, 6, 6});
  Tensor r2 = rand_tensor(rng, {2, 2, 6, 6});
  const real alpha = 2.0f, beta = 0.25f;  // powers of two: scaling is exact

  // Combined loss in one pass.
  Tensor wc = w.clone_values().set_requires_grad();
  Tape tc;
  {
    Tensor y = conv2d(tc, x, wc, ConvSpec{});
    Tensor l1 = sum_all(tc, mul(tc, y, r1));
    Tensor l2 = mse(tc, y, r2);
    tc.backward(lincomb(tc, alpha, l1, beta, l2));
  }
  std::vector<real> g_combined(wc.grad(), wc.grad() + wc.numel());

  // Separate passes, combined afterwards.
  Tensor w1 = w.clone_values().set_requires_grad();
  {
    Tape t;
    Tensor y = conv2d(t, x, w1, ConvSpec{});
    t.backward(sum_all(t, mul(t, y, r1)));
  }
  Tensor w2 = w.clone_values().set_requires_grad();
  {
    Tape t;
    Tensor y = conv2d(t, x, w2, ConvSpec{});
    t.backward(mse(t, y, r2));
  }
  for (int64_t i = 0; i < w.numel(); ++i) {
    const double want = static_cast<double>(alpha) * w1.grad()[i] +
                        static_cast<double>(beta) * w2.grad()[i];
    REQUIRE(g_combined[i] == doctest::Approx(want).epsilon(1e-5));
  }
}
