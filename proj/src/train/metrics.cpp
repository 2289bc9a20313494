#include "train/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "core/common.hpp"

namespace add {

namespace {

void check_inputs(const std::vector<double>& scores, const std::vector<int>& labels) {
  ADD_CHECK_ARG(!scores.empty(), "metrics need at least one sample");
  ADD_CHECK_ARG(scores.size() == labels.size(), "got %zu scores for %zu labels", scores.size(),
                labels.size());
  for (size_t i = 0; i < labels.size(); ++i)
    ADD_CHECK_ARG(labels[i] == 0 || labels[i] == 1, "label %zu is %d, outside {0,1}", i,
                  labels[i]);
}

}  // namespace

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels);
  const int64_t positives = std::accumulate(labels.begin(), labels.end(), int64_t{0});
  const int64_t negatives = static_cast<int64_t>(labels.size()) - positives;
  ADD_CHECK(positives > 0 && negatives > 0, ErrorCode::Degenerate,
            "AUC is undefined with a single class (%lld positive, %lld negative)",
            static_cast<long long>(positives), static_cast<long long>(negatives));

  // Mann-Whitney form: average tied ranks, then count positive rank mass.
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size(), 0.0);
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double positive_rank_sum = 0.0;
  for (size_t k = 0; k < labels.size(); ++k)
    if (labels[k] == 1) positive_rank_sum += rank[k];
  const double p = static_cast<double>(positives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

double accuracy(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels);
  int64_t hits = 0;
  for (size_t k = 0; k < scores.size(); ++k)
    hits += (scores[k] > 0.5 ? 1 : 0) == labels[k];
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

double auc_or_nan(const std::vector<double>& scores, const std::vector<int>& labels) {
  try {
    return auc(scores, labels);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Degenerate) return std::nan("");
    throw;
  }
}

MetricsReport evaluate_scores(const std::vector<double>& scores, const std::vector<int>& labels) {
  MetricsReport report;
  report.acc = accuracy(scores, labels);
  report.auc = auc_or_nan(scores, labels);
  for (size_t k = 0; k < scores.size(); ++k) {
    const bool fake = scores[k] > 0.5;
    if (labels[k] == 1)
      ++(fake ? report.tp : report.fn);
    else
      ++(fake ? report.fp : report.tn);
  }
  return report;
}

}  // namespace add
