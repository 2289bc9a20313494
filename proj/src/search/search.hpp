#pragma once

#include <cstdint>
#include <vector>

#include "data/dataset.hpp"
#include "net/network.hpp"
#include "search/cell.hpp"
#include "search/genotype.hpp"
#include "train/loop.hpp"
#include "train/optim.hpp"

namespace add {

struct SearchConfig {
  int blocks = 4;
  NetworkConfig network;
  int epochs = 30;
  int batch_size = 16;
  // Operation weights: momentum SGD stepping on training batches, with a
  // schedule over the search epochs (base_lr and total_epochs are taken from
  // w_opt.lr and epochs; an empty milestone list keeps the rate constant).
  OptimizerConfig w_opt = {OptimizerKind::MomentumSgd, 0.02, 0.9, 0.999, 1e-8, 5e-4};
  ScheduleSpec w_schedule = {ScheduleKind::StepDecay, 0.02, 1, {}, 0.1};
  // Architecture logits: Adam stepping on validation batches.
  OptimizerConfig alpha_opt = {OptimizerKind::Adam, 3e-4, 0.9, 0.999, 1e-8, 1e-3};
};

struct EpochStats {
  int epoch = 0;
  // Training rows are running means over the epoch's w steps (training
  // mode); validation rows come from a full eval-mode pass at epoch end.
  double train_ce = 0.0;
  double train_mse = 0.0;
  double train_acc = 0.0;
  double train_auc = 0.0;
  double val_ce = 0.0;
  double val_mse = 0.0;
  double val_acc = 0.0;
  double val_auc = 0.0;
};

struct SearchResult {
  ArchParams alpha;
  Genotype genotype;  // discretize(alpha), for convenience
  Detector supernet;  // final operation weights (usable for warm starts)
  std::vector<EpochStats> history;
  int64_t w_steps = 0;
  int64_t alpha_steps = 0;
};

// Bilevel architecture search: per training batch, one gradient step on the
// operation weights w (loss on the training batch), then one gradient step
// on the architecture logits alpha (loss on the next validation batch), in
// strict alternation. Both passes run in training mode, so normalization
// statistics see both streams. Deterministic given the caller's rng state.
// A non-finite loss aborts with a diagnostic naming the offending step.
SearchResult search(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                    const SearchConfig& config, Rng& rng);

}  // namespace add
