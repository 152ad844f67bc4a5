#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "wkpnet/error.hpp"

namespace wkpnet::nn {

/// NCHW extents; lower-rank tensors keep trailing extents at 1.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t count() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
  }
  bool operator==(const Shape&) const = default;
};

template <typename Real>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0)) : shape_(shape), values_(shape.count(), fill) {
    require(shape.n > 0 && shape.c > 0 && shape.h > 0 && shape.w > 0, ErrorKind::Shape,
            "tensor extents must be positive, got " + shape.str());
  }
  Tensor(Shape shape, std::vector<Real> values) : shape_(shape), values_(std::move(values)) {
    require(values_.size() == shape_.count(), ErrorKind::Shape, "value count does not match shape " + shape_.str());
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  Real* data() { return values_.data(); }
  const Real* data() const { return values_.data(); }
  std::span<Real> values() { return values_; }
  std::span<const Real> values() const { return values_; }

  Real& operator[](std::size_t i) { return values_[i]; }
  Real operator[](std::size_t i) const { return values_[i]; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  Real& at(int n, int c, int h, int w) { return values_[offset(n, c, h, w)]; }
  Real at(int n, int c, int h, int w) const { return values_[offset(n, c, h, w)]; }

  /// Start of the contiguous (h, w) plane for sample n, channel c.
  Real* plane(int n, int c) { return values_.data() + offset(n, c, 0, 0); }
  const Real* plane(int n, int c) const { return values_.data() + offset(n, c, 0, 0); }

  void fill(Real v) { std::fill(values_.begin(), values_.end(), v); }

  Tensor reshaped(Shape shape) const {
    require(shape.count() == shape_.count(), ErrorKind::Shape, "reshape must preserve element count");
    return Tensor(shape, values_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(values_.begin(), values_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  bool all_finite() const {
    for (Real v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<Real> values_;
};

enum class ParameterRole { Weight, Bias, Gamma, Beta };

template <typename Real>
struct Parameter {
  ParameterRole role = ParameterRole::Weight;
  int fan_in = 1;
  Tensor<Real> value;
  Tensor<Real> grad;

  Parameter() = default;
  Parameter(ParameterRole r, int fan, Shape shape) : role(r), fan_in(fan), value(shape), grad(shape) {}
  void zero_grad() { grad.fill(Real(0)); }
};

}  // namespace wkpnet::nn
