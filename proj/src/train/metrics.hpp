#pragma once

#include <vector>

namespace add {

struct MetricsReport {
  double acc = 0.0;
  double auc = 0.0;
  // Confusion counts at the 0.5 threshold; "positive" is the fake class.
  int tp = 0;
  int tn = 0;
  int fp = 0;
  int fn = 0;
};

// Rank-based AUC: the probability that a random positive outscores a random
// negative, with ties crediting 1/2. Scores are P(fake); labels are {0,1}.
// A single-class input leaves the metric undefined and is an error.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Same, but an undefined metric reads as NaN instead of an error; loops that
// log per-epoch numbers must not die on a single-class batch.
double auc_or_nan(const std::vector<double>& scores, const std::vector<int>& labels);

// Fraction of samples whose thresholded prediction (score > 0.5 means fake)
// matches the label.
double accuracy(const std::vector<double>& scores, const std::vector<int>& labels);

// acc, auc, and confusion counts in one pass over the scores. A single-class
// input leaves auc as NaN.
MetricsReport evaluate_scores(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace add
