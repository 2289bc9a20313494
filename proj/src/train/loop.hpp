#pragma once

#include <cstddef>
#include <vector>

#include "core/rng.hpp"
#include "data/dataset.hpp"
#include "net/network.hpp"
#include "search/cell.hpp"

namespace add {

// Samples bundled with their precomputed ground-truth region masks.
struct Prepared {
  std::vector<Sample> samples;
  std::vector<Tensor> masks;  // [1,h,w] each
};

// Computes each sample's mask once. A sample whose landmark hull is
// degenerate is skipped with a warning on stderr.
Prepared prepare(const std::vector<Sample>& samples);

struct Batch {
  Tensor images;  // [N,3,h,w]
  Tensor masks;   // [N,1,h,w]
  std::vector<int> labels;
};

Batch gather(const Prepared& set, const std::vector<size_t>& idx);

// Shuffled index batches covering the set once; the last batch may be short.
std::vector<std::vector<size_t>> epoch_batches(size_t n, int batch_size, Rng& rng);

// P(fake) per row of a [N,2] logits tensor, softmaxed in double precision.
std::vector<double> fake_scores(const Tensor& logits);

struct EvalResult {
  std::vector<double> scores;  // P(fake)
  std::vector<int> labels;
  double loss_ce = 0.0;   // sample-weighted means over the whole set
  double loss_mse = 0.0;
};

// Forward-only pass over the whole set in eval mode. Pass alpha to evaluate
// a supernet; pass nullptr for a discrete detector.
EvalResult evaluate_set(Detector& det, const ArchParams* alpha, const Prepared& set,
                        int batch_size);

}  // namespace add
