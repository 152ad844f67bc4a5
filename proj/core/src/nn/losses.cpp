#include "wkpnet/nn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace wkpnet::nn {

namespace {

// log softmax(z / T) for one row.
void log_softmax(const double* z, int n, double temperature, double* out) {
  double peak = z[0];
  for (int i = 1; i < n; ++i) peak = std::max(peak, z[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    out[i] = (z[i] - peak) / temperature;
    sum += std::exp(out[i]);
  }
  const double log_sum = std::log(sum);
  for (int i = 0; i < n; ++i) out[i] -= log_sum;
}

template <typename Real>
void check_logits(const Tensor<Real>& logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  require(s.h == 1 && s.w == 1 && s.c >= 2, ErrorKind::Shape, "logits must be (batch, classes, 1, 1), got " + s.str());
  require(labels.size() == static_cast<std::size_t>(s.n), ErrorKind::Shape, "one label per logit row required");
  for (int label : labels) {
    require(label >= 0 && label < s.c, ErrorKind::Parameter, "label " + std::to_string(label) + " out of range");
  }
  require(logits.all_finite(), ErrorKind::Divergence, "non-finite logits");
}

}  // namespace

std::vector<double> softened_softmax(std::span<const double> z, double temperature) {
  require(temperature > 0.0 && std::isfinite(temperature), ErrorKind::Parameter, "temperature must be positive");
  require(!z.empty(), ErrorKind::Shape, "softmax of an empty vector");
  for (double v : z) require(std::isfinite(v), ErrorKind::RejectedInput, "non-finite logit");
  std::vector<double> q(z.size());
  log_softmax(z.data(), static_cast<int>(z.size()), temperature, q.data());
  double sum = 0.0;
  for (double& v : q) {
    v = std::exp(v);
    sum += v;
  }
  for (double& v : q) v /= sum;
  return q;
}

template <typename Real>
LossResult<Real> cross_entropy(const Tensor<Real>& logits, std::span<const int> labels) {
  check_logits(logits, labels);
  const int batch = logits.shape().n;
  const int classes = logits.shape().c;
  LossResult<Real> result;
  result.grad = Tensor<Real>(logits.shape());
  std::vector<double> z(classes);
  std::vector<double> logq(classes);
  for (int n = 0; n < batch; ++n) {
    for (int i = 0; i < classes; ++i) z[i] = logits.at(n, i, 0, 0);
    log_softmax(z.data(), classes, 1.0, logq.data());
    result.ce -= logq[labels[n]];
    for (int i = 0; i < classes; ++i) {
      const double target = i == labels[n] ? 1.0 : 0.0;
      result.grad.at(n, i, 0, 0) = static_cast<Real>((std::exp(logq[i]) - target) / batch);
    }
  }
  result.ce /= batch;
  result.total = result.ce;
  return result;
}

template <typename Real>
LossResult<Real> kd_loss(const Tensor<Real>& student_logits, const Tensor<Real>& teacher_logits,
                         std::span<const int> labels, const DistillSettings& settings) {
  require(settings.alpha >= 0.0 && settings.alpha <= 1.0, ErrorKind::Parameter, "alpha must lie in [0, 1]");
  require(settings.temperature > 0.0, ErrorKind::Parameter, "temperature must be positive");
  require(student_logits.shape() == teacher_logits.shape(), ErrorKind::Shape, "student and teacher logits differ in shape");
  require(teacher_logits.all_finite(), ErrorKind::Divergence, "non-finite teacher logits");

  LossResult<Real> ce = cross_entropy(student_logits, labels);
  const int batch = student_logits.shape().n;
  const int classes = student_logits.shape().c;
  const double t = settings.temperature;
  const double kl_scale = settings.t_squared ? t * t : 1.0;

  std::vector<double> zs(classes), zt(classes), log_qs(classes), log_qt(classes);
  std::vector<double> kl_grad(static_cast<std::size_t>(batch) * classes);
  double kl = 0.0;
  for (int n = 0; n < batch; ++n) {
    for (int i = 0; i < classes; ++i) {
      zs[i] = student_logits.at(n, i, 0, 0);
      zt[i] = teacher_logits.at(n, i, 0, 0);
    }
    log_softmax(zs.data(), classes, t, log_qs.data());
    log_softmax(zt.data(), classes, t, log_qt.data());
    for (int i = 0; i < classes; ++i) {
      const double qt = std::exp(log_qt[i]);
      kl += qt * (log_qt[i] - log_qs[i]);
      kl_grad[static_cast<std::size_t>(n) * classes + i] = kl_scale * (std::exp(log_qs[i]) - qt) / t / batch;
    }
  }
  kl = kl_scale * kl / batch;

  LossResult<Real> result;
  result.kl = kl;
  result.ce = ce.ce;
  result.total = settings.alpha * kl + (1.0 - settings.alpha) * ce.ce;
  if (settings.alpha == 0.0) {
    result.grad = std::move(ce.grad);
    return result;
  }
  result.grad = Tensor<Real>(student_logits.shape());
  for (std::size_t i = 0; i < kl_grad.size(); ++i) {
    result.grad[i] = static_cast<Real>(settings.alpha * kl_grad[i] + (1.0 - settings.alpha) * ce.grad[i]);
  }
  return result;
}

template LossResult<float> cross_entropy<float>(const Tensor<float>&, std::span<const int>);
template LossResult<double> cross_entropy<double>(const Tensor<double>&, std::span<const int>);
template LossResult<float> kd_loss<float>(const Tensor<float>&, const Tensor<float>&, std::span<const int>,
                                          const DistillSettings&);
template LossResult<double> kd_loss<double>(const Tensor<double>&, const Tensor<double>&, std::span<const int>,
                                            const DistillSettings&);

}  // namespace wkpnet::nn
