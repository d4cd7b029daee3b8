#include "pspg/optim.hpp"

#include <cmath>
#include <numbers>

namespace pspg {

std::string optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adamw";
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adamw") return OptimizerKind::kAdamW;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + name + "' (expected adamw or sgd)");
}

void Schedule::validate() const {
  if (epochs == 0) throw ConfigError("schedule: epochs must be >= 1");
  if (warmup_epochs >= epochs) throw ConfigError("schedule: warmup_epochs must be < epochs");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("schedule: base_lr must be positive");
  if (!(warmup_lr >= 0.0) || !std::isfinite(warmup_lr))
    throw ConfigError("schedule: warmup_lr must be >= 0");
}

double lr_at(std::size_t epoch, const Schedule& s) {
  s.validate();
  if (epoch >= s.epochs)
    throw ConfigError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(s.epochs) + ")");
  if (epoch < s.warmup_epochs)
    return s.warmup_lr + (s.base_lr - s.warmup_lr) * static_cast<double>(epoch) /
                             static_cast<double>(s.warmup_epochs);
  const std::size_t span = s.epochs - 1 - s.warmup_epochs;
  if (span == 0) return s.base_lr;
  const double t = static_cast<double>(epoch - s.warmup_epochs) / static_cast<double>(span);
  return 0.5 * s.base_lr * (1.0 + std::cos(std::numbers::pi * t));
}

namespace {

// Gradients per parameter (zeros when none arrived), checked for finiteness.
std::vector<std::vector<double>> gather_grads(const ParamList& params, const char* who) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) {
      out.emplace_back(t.numel(), 0.0);
      continue;
    }
    const auto g = t.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g[i]))
        throw NumericError(std::string(who) + ": non-finite gradient " + std::to_string(g[i]) +
                           " in '" + name + "' at index " + std::to_string(i) +
                           "; step aborted");
    out.emplace_back(g.begin(), g.end());
  }
  return out;
}

void ensure_buffers(std::vector<std::vector<double>>& buf, const ParamList& params) {
  if (buf.size() == params.size()) return;
  buf.clear();
  for (const auto& p : params) buf.emplace_back(p.tensor.numel(), 0.0);
}

}  // namespace

void sgd_step(const ParamList& params, double lr, double momentum, OptimizerState& state) {
  const auto grads = gather_grads(params, "sgd_step");
  if (momentum != 0.0) ensure_buffers(state.m, params);
  ++state.steps;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    std::vector<double> next(t.data().begin(), t.data().end());
    for (std::size_t i = 0; i < next.size(); ++i) {
      double g = grads[k][i];
      if (momentum != 0.0) {
        state.m[k][i] = momentum * state.m[k][i] + g;
        g = state.m[k][i];
      }
      next[i] -= lr * g;
    }
    t.assign(next);
  }
}

void adamw_step(const ParamList& params, double lr, const AdamConfig& cfg, OptimizerState& state) {
  const auto grads = gather_grads(params, "adamw_step");
  ensure_buffers(state.m, params);
  ensure_buffers(state.v, params);
  ++state.steps;
  const double t = static_cast<double>(state.steps);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k].tensor;
    std::vector<double> next(p.data().begin(), p.data().end());
    for (std::size_t i = 0; i < next.size(); ++i) {
      const double g = grads[k][i];
      double& m = state.m[k][i];
      double& v = state.v[k][i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double step = (m / c1) / (std::sqrt(v / c2) + cfg.eps);
      next[i] -= lr * (step + cfg.weight_decay * next[i]);
    }
    p.assign(next);
  }
}

}  // namespace pspg
