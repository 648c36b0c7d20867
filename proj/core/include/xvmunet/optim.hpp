#pragma once

#include <cstddef>

#include "xvmunet/params.hpp"

namespace xvmunet::train {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;

  void validate() const;
};

// Decoupled weight decay, applied as p *= (1 - lr * decay) before the
// bias-corrected Adam update.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg);

  // grads must carry exactly the names and shapes of params.
  void step(ParamStore& params, const ParamStore& grads);

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::size_t step_count() const { return steps_; }
  const AdamWConfig& config() const { return cfg_; }
  const ParamStore& first_moments() const { return m_; }
  const ParamStore& second_moments() const { return v_; }

 private:
  AdamWConfig cfg_;
  ParamStore m_;
  ParamStore v_;
  std::size_t steps_ = 0;
};

struct CosineSchedule {
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  std::size_t t_max = 30;

  void validate() const;
  // lr_min + (lr_max - lr_min) (1 + cos(pi t / t_max)) / 2 for t in [0, t_max];
  // ContractError outside that range.
  double at(double t) const;
};

}  // namespace xvmunet::train
