#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "wkpnet/nn/tensor.hpp"

namespace wkpnet::nn {

enum class Mode { Train, Eval };

template <typename Real>
using ParameterVisitor = std::function<void(const std::string& name, Parameter<Real>& parameter)>;
template <typename Real>
using BufferVisitor = std::function<void(const std::string& name, Tensor<Real>& buffer)>;

/// A differentiable stage. forward() caches what backward() needs; backward()
/// accumulates parameter gradients and returns the gradient w.r.t. the input of
/// the most recent forward() call.
template <typename Real>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Shape output_shape(const Shape& input) const = 0;
  virtual Tensor<Real> forward(const Tensor<Real>& x, Mode mode) = 0;
  virtual Tensor<Real> backward(const Tensor<Real>& grad_output) = 0;

  virtual void visit_parameters(const std::string& /*prefix*/, const ParameterVisitor<Real>& /*visit*/) {}
  /// Non-trainable state that still belongs in a checkpoint (BN running statistics).
  virtual void visit_buffers(const std::string& /*prefix*/, const BufferVisitor<Real>& /*visit*/) {}
};

template <typename Real>
class Conv2d final : public Layer<Real> {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, int groups, bool bias);

  Shape output_shape(const Shape& input) const override;
  Tensor<Real> forward(const Tensor<Real>& x, Mode mode) override;
  Tensor<Real> backward(const Tensor<Real>& grad_output) override;
  void visit_parameters(const std::string& prefix, const ParameterVisitor<Real>& visit) override;

  Parameter<Real>& weight() { return weight_; }
  Parameter<Real>& bias() { return bias_; }
  bool has_bias() const { return has_bias_; }

 private:
  int in_;
  int out_;
  int kernel_;
  int stride_;
  int padding_;
  int groups_;
  bool has_bias_;
  Parameter<Real> weight_;
  Parameter<Real> bias_;
  Tensor<Real> input_;
};

template <typename Real>
class BatchNorm2d final : public Layer<Real> {
 public:
  explicit BatchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1);

  Shape output_shape(const Shape& input) const override { return input; }
  Tensor<Real> forward(const Tensor<Real>& x, Mode mode) override;
  Tensor<Real> backward(const Tensor<Real>& grad_output) override;
  void visit_parameters(const std::string& prefix, const ParameterVisitor<Real>& visit) override;
  void visit_buffers(const std::string& prefix, const BufferVisitor<Real>& visit) override;

  Parameter<Real>& gamma() { return gamma_; }
  Parameter<Real>& beta() { return beta_; }
  const Tensor<Real>& running_mean() const { return running_mean_; }
  const Tensor<Real>& running_var() const { return running_var_; }

 private:
  int channels_;
  double eps_;
  double momentum_;
  Parameter<Real> gamma_;
  Parameter<Real> beta_;
  Tensor<Real> running_mean_;
  Tensor<Real> running_var_;
  Mode last_mode_ = Mode::Eval;
  Tensor<Real> normalized_;
  std::vector<Real> inv_std_;
};

template <typename Real>
class ReLU final : public Layer<Real> {
 public:
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor<Real> forward(const Tensor<Real>& x, Mode mode) override;
  Tensor<Real> backward(const Tensor<Real>& grad_output) override;

 private:
  Tensor<Real> output_;
};

template <typename Real>
class Sigmoid final : public Layer<Real> {
 public:
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor<Real> forward(const Tensor<Real>& x, Mode mode) override;
  Tensor<Real> backward(const Tensor<Real>& grad_output) override;

 private:
  Tensor<Real> output_;
};

/// Non-overlapping max pooling (stride equals the window); ties route to the first maximum.
template <typename Real>
class MaxPool2d final : public Layer<Real> {
 public:
  MaxPool2d(int kernel_h, int kernel_w);

  Shape output_shape(const Shape& input) const override;
  Tensor<Real> forward(const Tensor<Real>& x, Mode mode) override;
  Tensor<Real> backward(const Tensor<Real>& grad_output) override;

 private:
  int kh_;
  int kw_;
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

template <typename Real>
class AdaptiveAvgPool final : public Layer<Real> {
 public:
  Shape output_shape(const Shape& input) const override { return {input.n, input.c, 1, 1}; }
  Tensor<Real> forward(const Tensor<Real>& x, Mode mode) override;
  Tensor<Real> backward(const Tensor<Real>& grad_output) override;

 private:
  Shape input_shape_;
};

template <typename Real>
class Flatten final : public Layer<Real> {
 public:
  Shape output_shape(const Shape& input) const override { return {input.n, input.c * input.h * input.w, 1, 1}; }
  Tensor<Real> forward(const Tensor<Real>& x, Mode mode) override;
  Tensor<Real> backward(const Tensor<Real>& grad_output) override;

 private:
  Shape input_shape_;
};

/// y = x W^T + b on (n, features, 1, 1) tensors.
template <typename Real>
class Linear final : public Layer<Real> {
 public:
  Linear(int in_features, int out_features);

  Shape output_shape(const Shape& input) const override;
  Tensor<Real> forward(const Tensor<Real>& x, Mode mode) override;
  Tensor<Real> backward(const Tensor<Real>& grad_output) override;
  void visit_parameters(const std::string& prefix, const ParameterVisitor<Real>& visit) override;

  Parameter<Real>& weight() { return weight_; }
  Parameter<Real>& bias() { return bias_; }

 private:
  int in_;
  int out_;
  Parameter<Real> weight_;
  Parameter<Real> bias_;
  Tensor<Real> input_;
};

/// x * sigmoid(conv_kxk([mean_c(x); max_c(x)])), the mask broadcast over channels.
template <typename Real>
class SpatialAttention final : public Layer<Real> {
 public:
  explicit SpatialAttention(int kernel = 7);

  Shape output_shape(const Shape& input) const override { return input; }
  Tensor<Real> forward(const Tensor<Real>& x, Mode mode) override;
  Tensor<Real> backward(const Tensor<Real>& grad_output) override;
  void visit_parameters(const std::string& prefix, const ParameterVisitor<Real>& visit) override;

  Conv2d<Real>& conv() { return conv_; }
  /// Mask from the most recent forward pass, shape (n, 1, h, w).
  const Tensor<Real>& mask() const { return mask_; }

 private:
  Conv2d<Real> conv_;
  Tensor<Real> input_;
  Tensor<Real> mask_;
  std::vector<int> max_channel_;
};

/// Bottleneck with grouped 3x3: 1x1 -> BN -> ReLU -> 3x3/groups -> BN -> ReLU -> 1x1 -> BN,
/// plus identity or 1x1 projection shortcut, then ReLU.
template <typename Real>
class ResNeXtBlock final : public Layer<Real> {
 public:
  ResNeXtBlock(int in_channels, int mid_channels, int out_channels, int groups, int stride);

  Shape output_shape(const Shape& input) const override;
  Tensor<Real> forward(const Tensor<Real>& x, Mode mode) override;
  Tensor<Real> backward(const Tensor<Real>& grad_output) override;
  void visit_parameters(const std::string& prefix, const ParameterVisitor<Real>& visit) override;
  void visit_buffers(const std::string& prefix, const BufferVisitor<Real>& visit) override;

  bool has_projection() const { return static_cast<bool>(projection_); }

 private:
  Conv2d<Real> reduce_;
  BatchNorm2d<Real> reduce_bn_;
  ReLU<Real> reduce_relu_;
  Conv2d<Real> grouped_;
  BatchNorm2d<Real> grouped_bn_;
  ReLU<Real> grouped_relu_;
  Conv2d<Real> expand_;
  BatchNorm2d<Real> expand_bn_;
  std::unique_ptr<Conv2d<Real>> projection_;
  std::unique_ptr<BatchNorm2d<Real>> projection_bn_;
  ReLU<Real> out_relu_;
};

template <typename Real>
class Sequential final : public Layer<Real> {
 public:
  void add(std::unique_ptr<Layer<Real>> layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }
  Layer<Real>& layer(std::size_t i) { return *layers_[i]; }

  Shape output_shape(const Shape& input) const override;
  Tensor<Real> forward(const Tensor<Real>& x, Mode mode) override;
  Tensor<Real> backward(const Tensor<Real>& grad_output) override;
  void visit_parameters(const std::string& prefix, const ParameterVisitor<Real>& visit) override;
  void visit_buffers(const std::string& prefix, const BufferVisitor<Real>& visit) override;

  /// When enabled, every intermediate activation and gradient is checked for NaN/Inf.
  void set_finite_checks(bool enabled) { finite_checks_ = enabled; }

 private:
  std::vector<std::unique_ptr<Layer<Real>>> layers_;
  bool finite_checks_ = false;
};

template <typename Real>
std::vector<Parameter<Real>*> parameter_list(Layer<Real>& layer);

template <typename Real>
void zero_gradients(Layer<Real>& layer);

/// Kaiming-uniform (fan-in, ReLU gain) weights, zero biases, unit gamma, zero beta.
/// Draws happen in 64-bit and are rounded to Real, so float and double copies agree.
template <typename Real>
void initialize_parameters(Layer<Real>& layer, std::uint64_t seed);

}  // namespace wkpnet::nn
