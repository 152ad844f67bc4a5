#pragma once

#include <vector>

#include "wkpnet/nn/tensor.hpp"

namespace wkpnet::nn {

struct AdamWSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay and bias correction. Decay is applied to every
/// parameter before the moment update: p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps).
template <typename Real>
class AdamW {
 public:
  AdamW(std::vector<Parameter<Real>*> parameters, AdamWSettings settings = {});

  void step(double lr);
  long steps() const { return steps_; }
  const AdamWSettings& settings() const { return settings_; }

 private:
  std::vector<Parameter<Real>*> parameters_;
  AdamWSettings settings_;
  std::vector<std::vector<Real>> m_;
  std::vector<std::vector<Real>> v_;
  long steps_ = 0;
};

/// lr0 * 0.5^floor(epoch / period), epochs counted from 0.
double step_decay_lr(double lr0, int epoch, int halving_period = 2);

}  // namespace wkpnet::nn
