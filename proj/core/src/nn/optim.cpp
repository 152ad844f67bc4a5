#include "wkpnet/nn/optim.hpp"

#include <cmath>

namespace wkpnet::nn {

template <typename Real>
AdamW<Real>::AdamW(std::vector<Parameter<Real>*> parameters, AdamWSettings settings)
    : parameters_(std::move(parameters)), settings_(settings) {
  require(settings_.beta1 >= 0.0 && settings_.beta1 < 1.0 && settings_.beta2 >= 0.0 && settings_.beta2 < 1.0,
          ErrorKind::Parameter, "AdamW betas must lie in [0, 1)");
  require(settings_.eps > 0.0 && settings_.weight_decay >= 0.0, ErrorKind::Parameter, "invalid AdamW eps or decay");
  for (Parameter<Real>* p : parameters_) {
    require(p->grad.shape() == p->value.shape(), ErrorKind::Shape, "gradient shape differs from parameter shape");
    m_.emplace_back(p->value.size(), Real(0));
    v_.emplace_back(p->value.size(), Real(0));
  }
}

template <typename Real>
void AdamW<Real>::step(double lr) {
  require(lr > 0.0, ErrorKind::Parameter, "learning rate must be positive");
  ++steps_;
  const Real b1 = static_cast<Real>(settings_.beta1);
  const Real b2 = static_cast<Real>(settings_.beta2);
  const Real correction1 = static_cast<Real>(1.0 - std::pow(settings_.beta1, static_cast<double>(steps_)));
  const Real correction2 = static_cast<Real>(1.0 - std::pow(settings_.beta2, static_cast<double>(steps_)));
  const Real decay = static_cast<Real>(1.0 - lr * settings_.weight_decay);
  const Real rate = static_cast<Real>(lr);
  const Real eps = static_cast<Real>(settings_.eps);
  for (std::size_t k = 0; k < parameters_.size(); ++k) {
    Real* p = parameters_[k]->value.data();
    const Real* g = parameters_[k]->grad.data();
    Real* m = m_[k].data();
    Real* v = v_[k].data();
    const std::size_t n = m_[k].size();
    for (std::size_t i = 0; i < n; ++i) {
      p[i] *= decay;
      m[i] = b1 * m[i] + (Real(1) - b1) * g[i];
      v[i] = b2 * v[i] + (Real(1) - b2) * g[i] * g[i];
      const Real m_hat = m[i] / correction1;
      const Real v_hat = v[i] / correction2;
      p[i] -= rate * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

double step_decay_lr(double lr0, int epoch, int halving_period) {
  require(lr0 > 0.0 && epoch >= 0 && halving_period > 0, ErrorKind::Parameter, "invalid learning-rate schedule");
  return lr0 * std::ldexp(1.0, -(epoch / halving_period));
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace wkpnet::nn
