#pragma once

// Learning-rate schedule and the two optimizers used by the training phases.

#include <cstddef>
#include <string>
#include <vector>

#include "pspg/params.hpp"

namespace pspg {

enum class OptimizerKind { kAdamW, kSgd };

std::string optimizer_name(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& name);

struct Schedule {
  double base_lr = 1e-4;
  double warmup_lr = 1e-6;
  std::size_t warmup_epochs = 5;
  std::size_t epochs = 50;

  void validate() const;
};

// Linear warmup from warmup_lr to base_lr, then cosine annealing to zero on
// the last epoch: with t = epoch - warmup and T = epochs - 1 - warmup,
//   lr = 0.5 * base_lr * (1 + cos(pi * t / T)).
double lr_at(std::size_t epoch, const Schedule& s);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Per-parameter moment buffers, created on first use.
struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t steps = 0;
};

// theta <- theta - lr * (g + momentum buffer). A parameter that received no
// gradient counts as g = 0. Non-finite gradients abort before any update.
void sgd_step(const ParamList& params, double lr, double momentum, OptimizerState& state);

// Bias-corrected Adam with decoupled decay:
//   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
void adamw_step(const ParamList& params, double lr, const AdamConfig& cfg, OptimizerState& state);

}  // namespace pspg
