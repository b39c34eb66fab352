#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "fedstill/tensor.hpp"

namespace fedstill::tensor {

// Named parameter collection, ordered by name.
using ParamMap = std::map<std::string, Tensor>;

struct AdamWConfig {
  double base_lr = 4e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double warmup_fraction = 0.1;
};

// Last step of the linear warm-up ramp.
std::size_t warmup_end(std::size_t total_steps, double warmup_fraction);

// Linear ramp 0 -> base_lr over the warm-up window, constant afterwards.
double schedule_lr(std::size_t step, std::size_t total_steps, double base_lr,
                   double warmup_fraction = 0.1);

class OptimizerState {
 public:
  explicit OptimizerState(AdamWConfig config = {}) : config_(config) {}

  const AdamWConfig& config() const noexcept { return config_; }
  std::size_t step() const noexcept { return step_; }
  const ParamMap& first_moment() const noexcept { return m_; }
  const ParamMap& second_moment() const noexcept { return v_; }

 private:
  friend void adamw_step(ParamMap&, const ParamMap&, OptimizerState&, std::size_t);

  AdamWConfig config_;
  std::size_t step_ = 0;
  ParamMap m_;
  ParamMap v_;
};

// One decoupled-weight-decay Adam update. The learning rate is
// schedule_lr(step after increment, total_steps). Throws MissingGradient if a
// parameter has no entry in grads.
void adamw_step(ParamMap& params, const ParamMap& grads, OptimizerState& state,
                std::size_t total_steps);

}  // namespace fedstill::tensor
