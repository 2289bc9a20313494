#include "search/search.hpp"

#include <cmath>

#include "core/common.hpp"
#include "core/tape.hpp"
#include "train/metrics.hpp"

namespace add {

SearchResult search(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                    const SearchConfig& config, Rng& rng) {
  ADD_CHECK_CFG(!train_set.empty(), "search needs a non-empty training split");
  ADD_CHECK_CFG(!val_set.empty(), "search needs a non-empty validation split");
  ADD_CHECK_CFG(config.epochs >= 1, "search needs at least 1 epoch, got %d", config.epochs);
  ADD_CHECK_CFG(config.batch_size >= 1, "batch size must be positive, got %d", config.batch_size);
  ADD_CHECK_CFG(config.network.lambda_mask >= 0.0, "lambda_mask must be non-negative, got %g",
                config.network.lambda_mask);
  validate_network_config(config.network);

  const Prepared train = prepare(train_set);
  const Prepared val = prepare(val_set);
  ADD_CHECK_CFG(!train.samples.empty(), "every training sample was skipped as degenerate");
  ADD_CHECK_CFG(!val.samples.empty(), "every validation sample was skipped as degenerate");

  SearchResult result;
  result.alpha = ArchParams::create(config.blocks, rng);
  result.supernet = assemble_supernet(config.blocks, config.network, rng);
  Detector& det = result.supernet;
  ArchParams& alpha = result.alpha;

  Optimizer w_opt(config.w_opt, det.params());
  Optimizer a_opt(config.alpha_opt, {alpha.normal, alpha.reduce});
  ScheduleSpec schedule = config.w_schedule;
  schedule.base_lr = config.w_opt.lr;
  schedule.total_epochs = config.epochs;

  auto zero_grads = [&]() {
    for (Tensor& p : det.params()) p.zero_grad();
    alpha.normal.zero_grad();
    alpha.reduce.zero_grad();
  };
  const double lambda = config.network.lambda_mask;

  std::vector<std::vector<size_t>> val_batches;
  size_t val_cursor = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // A zero weight learning rate means "freeze the operation weights"; the
    // schedule only applies to a live rate (it rejects base_lr == 0).
    if (config.w_opt.lr != 0.0) w_opt.set_lr(lr_at(schedule, epoch));
    const std::vector<std::vector<size_t>> train_batches =
        epoch_batches(train.samples.size(), config.batch_size, rng);

    double ce_sum = 0.0, mse_sum = 0.0;
    std::vector<double> train_scores;
    std::vector<int> train_labels;

    for (const std::vector<size_t>& bidx : train_batches) {
      {  // One descent step on the operation weights, training loss.
        const Batch b = gather(train, bidx);
        zero_grads();
        Tape tape;
        DetectorOutput out = forward_mixed(tape, det, alpha, b.images, true);
        Tensor ce = loss_ce_masked(tape, out, b.labels);
        Tensor mse = loss_mask(tape, out, b.masks);
        Tensor loss = ops::lincomb(tape, 1.0f, ce, static_cast<real>(lambda), mse);
        const double lv = loss.item();
        ADD_CHECK(std::isfinite(lv), ErrorCode::Numeric,
                  "non-finite training loss %g at w step %lld (epoch %d)", lv,
                  static_cast<long long>(w_opt.steps() + 1), epoch);
        tape.backward(loss);
        w_opt.step();
        const double n = static_cast<double>(bidx.size());
        ce_sum += ce.item() * n;
        mse_sum += mse.item() * n;
        const std::vector<double> s = fake_scores(out.logits);
        train_scores.insert(train_scores.end(), s.begin(), s.end());
        train_labels.insert(train_labels.end(), b.labels.begin(), b.labels.end());
      }
      {  // One descent step on the architecture logits, validation loss.
        if (val_cursor >= val_batches.size()) {
          val_batches = epoch_batches(val.samples.size(), config.batch_size, rng);
          val_cursor = 0;
        }
        const Batch b = gather(val, val_batches[val_cursor++]);
        zero_grads();
        Tape tape;
        DetectorOutput out = forward_mixed(tape, det, alpha, b.images, true);
        Tensor ce = loss_ce_masked(tape, out, b.labels);
        Tensor mse = loss_mask(tape, out, b.masks);
        Tensor loss = ops::lincomb(tape, 1.0f, ce, static_cast<real>(lambda), mse);
        const double lv = loss.item();
        ADD_CHECK(std::isfinite(lv), ErrorCode::Numeric,
                  "non-finite validation loss %g at alpha step %lld (epoch %d)", lv,
                  static_cast<long long>(a_opt.steps() + 1), epoch);
        tape.backward(loss);
        a_opt.step();
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    const double seen = static_cast<double>(train_scores.size());
    stats.train_ce = ce_sum / seen;
    stats.train_mse = mse_sum / seen;
    stats.train_acc = accuracy(train_scores, train_labels);
    stats.train_auc = auc_or_nan(train_scores, train_labels);
    const EvalResult ev = evaluate_set(det, &alpha, val, config.batch_size);
    stats.val_ce = ev.loss_ce;
    stats.val_mse = ev.loss_mse;
    stats.val_acc = accuracy(ev.scores, ev.labels);
    stats.val_auc = auc_or_nan(ev.scores, ev.labels);
    result.history.push_back(stats);
  }

  result.w_steps = w_opt.steps();
  result.alpha_steps = a_opt.steps();
  result.genotype = discretize(alpha);
  return result;
}

}  // namespace add
