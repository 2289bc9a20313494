#include "train/loop.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

#include "core/common.hpp"
#include "core/tape.hpp"

namespace add {

Prepared prepare(const std::vector<Sample>& samples) {
  Prepared out;
  out.samples.reserve(samples.size());
  out.masks.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    Tensor mask;
    try {
      mask = mask_from_landmarks(samples[i].landmarks);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Degenerate) {
        std::fprintf(stderr, "warning: sample %zu has a degenerate landmark hull; skipping\n", i);
        continue;
      }
      throw;
    }
    out.samples.push_back(samples[i]);
    out.masks.push_back(std::move(mask));
  }
  return out;
}

Batch gather(const Prepared& set, const std::vector<size_t>& idx) {
  ADD_CHECK_ARG(!idx.empty(), "cannot gather an empty batch");
  const Tensor& first = set.samples[idx[0]].image;
  const int h = first.dim(1), w = first.dim(2);
  const int n = static_cast<int>(idx.size());
  Batch b;
  b.images = Tensor::empty({n, 3, h, w});
  b.masks = Tensor::empty({n, 1, h, w});
  b.labels.reserve(idx.size());
  const int64_t img_sz = static_cast<int64_t>(3) * h * w;
  const int64_t mask_sz = static_cast<int64_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    const Sample& s = set.samples[idx[static_cast<size_t>(i)]];
    const Tensor& m = set.masks[idx[static_cast<size_t>(i)]];
    ADD_CHECK_ARG(s.image.dim(1) == h && s.image.dim(2) == w,
                  "batch mixes image sizes %dx%d and %dx%d", h, w, s.image.dim(1), s.image.dim(2));
    std::memcpy(b.images.data() + i * img_sz, s.image.data(),
                sizeof(float) * static_cast<size_t>(img_sz));
    std::memcpy(b.masks.data() + i * mask_sz, m.data(),
                sizeof(float) * static_cast<size_t>(mask_sz));
    b.labels.push_back(s.label);
  }
  return b;
}

std::vector<std::vector<size_t>> epoch_batches(size_t n, int batch_size, Rng& rng) {
  ADD_CHECK_ARG(batch_size >= 1, "batch size must be positive, got %d", batch_size);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<size_t>> batches;
  for (size_t at = 0; at < n; at += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(n, at + static_cast<size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<int64_t>(at),
                         order.begin() + static_cast<int64_t>(end));
  }
  return batches;
}

std::vector<double> fake_scores(const Tensor& logits) {
  ADD_CHECK_ARG(logits.rank() == 2 && logits.dim(1) == 2, "expected [N,2] logits, got %s",
                shape_str(logits.shape()).c_str());
  std::vector<double> scores;
  scores.reserve(static_cast<size_t>(logits.dim(0)));
  for (int i = 0; i < logits.dim(0); ++i) {
    const double l0 = logits.data()[i * 2];
    const double l1 = logits.data()[i * 2 + 1];
    const double m = std::max(l0, l1);
    const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
    scores.push_back(e1 / (e0 + e1));
  }
  return scores;
}

EvalResult evaluate_set(Detector& det, const ArchParams* alpha, const Prepared& set,
                        int batch_size) {
  ADD_CHECK_ARG(!set.samples.empty(), "cannot evaluate an empty set");
  EvalResult result;
  double ce_sum = 0.0, mse_sum = 0.0;
  std::vector<size_t> idx;
  for (size_t at = 0; at < set.samples.size(); at += static_cast<size_t>(batch_size)) {
    idx.clear();
    for (size_t i = at; i < std::min(set.samples.size(), at + static_cast<size_t>(batch_size)); ++i)
      idx.push_back(i);
    const Batch b = gather(set, idx);
    Tape tape;
    tape.set_enabled(false);
    DetectorOutput out = alpha ? forward_mixed(tape, det, *alpha, b.images, false)
                               : forward(tape, det, b.images, false);
    const double n = static_cast<double>(idx.size());
    ce_sum += loss_ce_masked(tape, out, b.labels).item() * n;
    mse_sum += loss_mask(tape, out, b.masks).item() * n;
    const std::vector<double> s = fake_scores(out.logits);
    result.scores.insert(result.scores.end(), s.begin(), s.end());
    result.labels.insert(result.labels.end(), b.labels.begin(), b.labels.end());
  }
  const double total = static_cast<double>(set.samples.size());
  result.loss_ce = ce_sum / total;
  result.loss_mse = mse_sum / total;
  return result;
}

}  // namespace add
