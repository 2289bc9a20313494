#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace add {

enum class OptimizerKind { MomentumSgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::MomentumSgd;
  double lr = 0.01;
  double momentum = 0.9;  // SGD momentum, or Adam beta1
  double beta2 = 0.999;   // Adam only
  double eps = 1e-8;      // Adam only
  double weight_decay = 0.0;
};

// In-place gradient-descent updates over a fixed parameter list. Weight decay
// enters as an additive L2 gradient term; a missing gradient counts as zero.
// Moment buffers are created zero and shape-match their parameters for the
// optimizer's lifetime. With lr == 0 a step advances the buffers and counter
// but leaves every parameter byte untouched.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::vector<Tensor> params);

  void step();
  void set_lr(double lr);
  double lr() const { return cfg_.lr; }
  int64_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_;  // momentum / first moment
  std::vector<std::vector<float>> v_;  // second moment (Adam)
  int64_t steps_ = 0;
};

enum class ScheduleKind { StepDecay, Cosine };

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::Cosine;
  double base_lr = 0.01;
  int total_epochs = 1;
  std::vector<int> milestones;  // step decay: epochs where the lr drops
  double factor = 0.1;          // step decay: multiplier at each milestone
};

// Learning rate for an epoch in [0, total_epochs). Step decay multiplies the
// base rate by factor once per milestone passed; cosine follows
// base * 0.5 * (1 + cos(pi * epoch / total)). Always positive in range.
double lr_at(const ScheduleSpec& spec, int epoch);

void validate_schedule(const ScheduleSpec& spec);

const char* optimizer_kind_name(OptimizerKind kind);
OptimizerKind optimizer_kind_from_name(const std::string& name);
const char* schedule_kind_name(ScheduleKind kind);
ScheduleKind schedule_kind_from_name(const std::string& name);

}  // namespace add
