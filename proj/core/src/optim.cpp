#include "xvmunet/optim.hpp"

#include <cmath>
#include <numbers>

#include "xvmunet/errors.hpp"

namespace xvmunet::train {

void AdamWConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("AdamW betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("AdamW eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
}

AdamW::AdamW(AdamWConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void AdamW::step(ParamStore& params, const ParamStore& grads) {
  if (grads.size() != params.size()) {
    throw ContractError("AdamW: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  }
  if (steps_ == 0) {
    m_ = params.zeros_like();
    v_ = params.zeros_like();
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;

  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    if (g.shape() != p.shape()) {
      throw ContractError("AdamW: gradient for '" + name + "' has shape " + shape_str(g.shape()) +
                          ", parameter has " + shape_str(p.shape()));
    }
    Tensor& m = m_.at(name);
    Tensor& v = v_.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] *= decay;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

void CosineSchedule::validate() const {
  if (t_max == 0) throw ConfigError("scheduler T_max must be positive");
  if (!(lr_min >= 0.0) || !(lr_max >= lr_min)) {
    throw ConfigError("scheduler needs 0 <= lr_min <= lr_max");
  }
}

double CosineSchedule::at(double t) const {
  const double tm = static_cast<double>(t_max);
  if (!(t >= 0.0 && t <= tm)) {
    throw ContractError("cosine_lr: t = " + std::to_string(t) + " outside [0, " + std::to_string(t_max) + "]");
  }
  if (t == 0.0) return lr_max;
  if (t == tm) return lr_min;
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t / tm));
}

}  // namespace xvmunet::train
