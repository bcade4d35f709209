#pragma once

#include "evod/gradcore.hpp"

#include <cstdint>
#include <vector>

namespace evod::grad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are aligned with the parameter
/// list given at construction.
class Adam {
 public:
  Adam() = default;
  Adam(ParamList params, AdamConfig cfg);

  void step();
  void zero_grad() { zero_grads(params_); }

  const ParamList& params() const noexcept { return params_; }
  const AdamConfig& config() const noexcept { return cfg_; }
  void set_lr(double lr) noexcept { cfg_.lr = lr; }
  std::int64_t steps() const noexcept { return t_; }

 private:
  ParamList params_;
  AdamConfig cfg_;
  std::vector<Mat> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace evod::grad
