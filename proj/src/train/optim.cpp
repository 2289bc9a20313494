#include "train/optim.hpp"

#include <cmath>

#include "core/common.hpp"

namespace add {

Optimizer::Optimizer(OptimizerConfig cfg, std::vector<Tensor> params)
    : cfg_(cfg), params_(std::move(params)) {
  ADD_CHECK_CFG(cfg_.lr >= 0.0, "learning rate must be non-negative, got %g", cfg_.lr);
  ADD_CHECK_CFG(cfg_.momentum >= 0.0 && cfg_.momentum < 1.0,
                "momentum must be in [0,1), got %g", cfg_.momentum);
  ADD_CHECK_CFG(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0, "beta2 must be in [0,1), got %g",
                cfg_.beta2);
  ADD_CHECK_CFG(cfg_.eps > 0.0, "eps must be positive, got %g", cfg_.eps);
  ADD_CHECK_CFG(cfg_.weight_decay >= 0.0, "weight decay must be non-negative, got %g",
                cfg_.weight_decay);
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
    v_.emplace_back(cfg_.kind == OptimizerKind::Adam ? static_cast<size_t>(p.numel()) : 0, 0.0f);
  }
}

void Optimizer::step() {
  ++steps_;
  const bool write = cfg_.lr != 0.0;
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    const real* grad = p.grad();
    float* pd = p.data();
    std::vector<float>& m = m_[i];
    const int64_t n = p.numel();
    if (cfg_.kind == OptimizerKind::MomentumSgd) {
      for (int64_t k = 0; k < n; ++k) {
        const double g = (grad ? static_cast<double>(grad[k]) : 0.0) +
                         cfg_.weight_decay * static_cast<double>(pd[k]);
        const double vel = cfg_.momentum * static_cast<double>(m[static_cast<size_t>(k)]) + g;
        m[static_cast<size_t>(k)] = static_cast<float>(vel);
        if (write) pd[k] = static_cast<float>(static_cast<double>(pd[k]) - cfg_.lr * vel);
      }
    } else {
      std::vector<float>& v = v_[i];
      const double bc1 = 1.0 - std::pow(cfg_.momentum, static_cast<double>(steps_));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
      for (int64_t k = 0; k < n; ++k) {
        const double g = (grad ? static_cast<double>(grad[k]) : 0.0) +
                         cfg_.weight_decay * static_cast<double>(pd[k]);
        const double m1 = cfg_.momentum * static_cast<double>(m[static_cast<size_t>(k)]) +
                          (1.0 - cfg_.momentum) * g;
        const double m2 =
            cfg_.beta2 * static_cast<double>(v[static_cast<size_t>(k)]) + (1.0 - cfg_.beta2) * g * g;
        m[static_cast<size_t>(k)] = static_cast<float>(m1);
        v[static_cast<size_t>(k)] = static_cast<float>(m2);
        if (write) {
          const double update = (m1 / bc1) / (std::sqrt(m2 / bc2) + cfg_.eps);
          pd[k] = static_cast<float>(static_cast<double>(pd[k]) - cfg_.lr * update);
        }
      }
    }
  }
}

void Optimizer::set_lr(double lr) {
  ADD_CHECK_CFG(lr >= 0.0, "learning rate must be non-negative, got %g", lr);
  cfg_.lr = lr;
}

void validate_schedule(const ScheduleSpec& spec) {
  ADD_CHECK_CFG(spec.base_lr > 0.0, "schedule base_lr must be positive, got %g", spec.base_lr);
  ADD_CHECK_CFG(spec.total_epochs >= 1, "schedule needs at least 1 epoch, got %d",
                spec.total_epochs);
  if (spec.kind == ScheduleKind::StepDecay) {
    ADD_CHECK_CFG(spec.factor > 0.0, "step-decay factor must be positive, got %g", spec.factor);
    for (size_t i = 0; i < spec.milestones.size(); ++i) {
      ADD_CHECK_CFG(spec.milestones[i] >= 1, "step-decay milestone %d must be >= 1",
                    spec.milestones[i]);
      ADD_CHECK_CFG(i == 0 || spec.milestones[i] > spec.milestones[i - 1],
                    "step-decay milestones must be strictly increasing");
    }
  }
}

double lr_at(const ScheduleSpec& spec, int epoch) {
  validate_schedule(spec);
  ADD_CHECK_ARG(epoch >= 0 && epoch < spec.total_epochs,
                "epoch %d outside the schedule range [0,%d)", epoch, spec.total_epochs);
  if (spec.kind == ScheduleKind::StepDecay) {
    double lr = spec.base_lr;
    for (int m : spec.milestones)
      if (epoch >= m) lr *= spec.factor;
    return lr;
  }
  return spec.base_lr * 0.5 *
         (1.0 + std::cos(M_PI * static_cast<double>(epoch) / static_cast<double>(spec.total_epochs)));
}

const char* optimizer_kind_name(OptimizerKind kind) {
  return kind == OptimizerKind::MomentumSgd ? "momentum_sgd" : "adam";
}

OptimizerKind optimizer_kind_from_name(const std::string& name) {
  if (name == "momentum_sgd") return OptimizerKind::MomentumSgd;
  if (name == "adam") return OptimizerKind::Adam;
  fail(ErrorCode::Format, strformat("unknown optimizer \"%s\"", name.c_str()));
}

const char* schedule_kind_name(ScheduleKind kind) {
  return kind == ScheduleKind::StepDecay ? "step_decay" : "cosine";
}

ScheduleKind schedule_kind_from_name(const std::string& name) {
  if (name == "step_decay") return ScheduleKind::StepDecay;
  if (name == "cosine") return ScheduleKind::Cosine;
  fail(ErrorCode::Format, strformat("unknown schedule \"%s\"", name.c_str()));
}

}  // namespace add
