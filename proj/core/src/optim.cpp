#include "fedstill/optim.hpp"

#include <cmath>

#include "fedstill/error.hpp"

namespace fedstill::tensor {

std::size_t warmup_end(std::size_t total_steps, double warmup_fraction) {
  return static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
}

double schedule_lr(std::size_t step, std::size_t total_steps, double base_lr, double warmup_fraction) {
  const auto end = warmup_end(total_steps, warmup_fraction);
  if (end == 0 || step >= end) return base_lr;
  return base_lr * static_cast<double>(step) / static_cast<double>(end);
}

void adamw_step(ParamMap& params, const ParamMap& grads, OptimizerState& state, std::size_t total_steps) {
  for (const auto& [name, p] : params) {
    const auto it = grads.find(name);
    if (it == grads.end()) fail(ErrorCode::kMissingGradient, "no gradient for parameter '" + name + "'");
    if (it->second.shape() != p.shape()) {
      fail(ErrorCode::kShapeMismatch, "gradient for '" + name + "' has shape " +
                                          shape_str(it->second.shape()) + ", parameter " + shape_str(p.shape()));
    }
  }

  const auto& cfg = state.config_;
  ++state.step_;
  const double lr = schedule_lr(state.step_, total_steps, cfg.base_lr, cfg.warmup_fraction);
  const double t = static_cast<double>(state.step_);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  for (auto& [name, p] : params) {
    const auto g = grads.at(name).values();
    auto [mit, m_new] = state.m_.try_emplace(name, Tensor::zeros(p.shape()));
    auto [vit, v_new] = state.v_.try_emplace(name, Tensor::zeros(p.shape()));
    auto m = mit->second.values();
    auto v = vit->second.values();
    auto w = p.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * cfg.weight_decay * w[i];
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace fedstill::tensor
