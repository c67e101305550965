#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "brainseg/error.hpp"
#include "brainseg/nn/layers.hpp"

namespace brainseg {

struct OptimizerConfig {
  double alpha0 = 6e-5;
  double beta1 = 0.9, beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  std::size_t batch_size = 16;  // full-scale runs used 80
  int epochs = 30;
  double lr_power = 0.75;

  void validate() const {
    if (!(alpha0 > 0.0)) throw ValidationError("optimizer alpha0 must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ValidationError("optimizer betas must lie in [0,1)");
    if (!(adam_eps > 0.0)) throw ValidationError("optimizer adam_eps must be > 0");
    if (!(weight_decay >= 0.0)) throw ValidationError("optimizer weight_decay must be >= 0");
    if (batch_size < 1) throw ValidationError("optimizer batch_size must be >= 1");
    if (epochs < 1) throw ValidationError("optimizer epochs must be >= 1");
    if (!(lr_power > 0.0)) throw ValidationError("optimizer lr_power must be > 0");
  }
};

/// Polynomial decay alpha0 * (1 - epoch/total)^power.
inline double lr_schedule(double alpha0, int epoch, int total_epochs, double power) {
  if (total_epochs < 1 || epoch < 0 || epoch > total_epochs)
    throw ValidationError("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(total_epochs) + "]");
  return alpha0 * std::pow(1.0 - double(epoch) / double(total_epochs), power);
}

/// Adam with L2 weight decay folded into the gradient. Moments are kept in double.
template <class T>
class Adam {
 public:
  Adam(std::vector<nn::Param<T>*> params, const OptimizerConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      if (!p.trainable) continue;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = double(p.grad[i]) + cfg_.weight_decay * double(p.value[i]);
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        p.value[i] = T(double(p.value[i]) - lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.adam_eps));
      }
    }
  }

  long steps() const { return t_; }

 private:
  std::vector<nn::Param<T>*> params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace brainseg
