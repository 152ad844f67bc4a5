#pragma once

#include <span>
#include <vector>

#include "wkpnet/nn/tensor.hpp"

namespace wkpnet::nn {

/// exp(z_i / T) / sum_j exp(z_j / T), evaluated after subtracting max(z).
std::vector<double> softened_softmax(std::span<const double> z, double temperature);

template <typename Real>
struct LossResult {
  double total = 0.0;
  double kl = 0.0;
  double ce = 0.0;
  /// d total / d logits, same shape as the student logits.
  Tensor<Real> grad;
};

/// Mean cross-entropy of softmax(logits) against integer class labels.
/// Logits are (batch, classes, 1, 1).
template <typename Real>
LossResult<Real> cross_entropy(const Tensor<Real>& logits, std::span<const int> labels);

struct DistillSettings {
  double temperature = 5.0;
  double alpha = 0.5;
  /// Multiply the KL term by T^2 (the usual practice; the default follows the plain formula).
  bool t_squared = false;
};

/// alpha * KL(teacher_T || student_T) + (1 - alpha) * CE(student_1, labels), batch mean.
/// Teacher logits are constants. With alpha = 0 the gradient is exactly the CE gradient.
template <typename Real>
LossResult<Real> kd_loss(const Tensor<Real>& student_logits, const Tensor<Real>& teacher_logits,
                         std::span<const int> labels, const DistillSettings& settings);

}  // namespace wkpnet::nn
