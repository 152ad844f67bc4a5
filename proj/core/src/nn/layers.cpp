#include "wkpnet/nn/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "wkpnet/seeding.hpp"

namespace wkpnet::nn {

namespace {

template <typename Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatrixMap = Eigen::Map<RowMatrix<Real>>;
template <typename Real>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Real>>;
template <typename Real>
using ArrayMap = Eigen::Map<Eigen::Array<Real, Eigen::Dynamic, 1>>;
template <typename Real>
using ConstArrayMap = Eigen::Map<const Eigen::Array<Real, Eigen::Dynamic, 1>>;
template <typename Real>
using ConstVectorMap = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>;

// Eigen's reductions peel leading elements up to the next SIMD boundary, so their
// summation order follows the runtime address. These fixed-lane loops depend on the
// index alone, which keeps training bit-reproducible within one process.
constexpr std::size_t kLanes = 8;

template <typename Real, typename Term>
double ordered_reduce(std::size_t n, Term term) {
  double lanes[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) lanes[j] += static_cast<double>(term(i + j));
  }
  for (; i < n; ++i) lanes[i % kLanes] += static_cast<double>(term(i));
  double total = 0.0;
  for (double v : lanes) total += v;
  return total;
}

template <typename Real>
double ordered_sum(const Real* a, std::size_t n) {
  return ordered_reduce<Real>(n, [a](std::size_t i) { return a[i]; });
}

template <typename Real>
double ordered_dot(const Real* a, const Real* b, std::size_t n) {
  return ordered_reduce<Real>(n, [a, b](std::size_t i) { return a[i] * b[i]; });
}

struct ConvGeometry {
  int channels;
  int height;
  int width;
  int kernel;
  int stride;
  int padding;
  int out_height;
  int out_width;
};

// Output columns [lo, hi) of a kernel offset read inside the input row; the rest is padding.
struct ColumnRange {
  int lo;
  int hi;
};

ColumnRange valid_columns(const ConvGeometry& g, int kw) {
  const int shift = kw - g.padding;
  int lo = 0;
  while (lo < g.out_width && lo * g.stride + shift < 0) ++lo;
  int hi = g.out_width;
  while (hi > lo && (hi - 1) * g.stride + shift >= g.width) --hi;
  return {lo, hi};
}

// col[(c * k + kh) * k + kw][oh * out_w + ow] = x[c][oh * s - p + kh][ow * s - p + kw], zero outside.
template <typename Real>
void im2col(const Real* x, const ConvGeometry& g, Real* col) {
  const int positions = g.out_height * g.out_width;
  for (int c = 0; c < g.channels; ++c) {
    const Real* plane = x + static_cast<std::size_t>(c) * g.height * g.width;
    for (int kh = 0; kh < g.kernel; ++kh) {
      for (int kw = 0; kw < g.kernel; ++kw) {
        Real* row = col + static_cast<std::size_t>((c * g.kernel + kh) * g.kernel + kw) * positions;
        const ColumnRange r = valid_columns(g, kw);
        const int shift = kw - g.padding;
        for (int oh = 0; oh < g.out_height; ++oh) {
          const int ih = oh * g.stride - g.padding + kh;
          Real* dst = row + static_cast<std::size_t>(oh) * g.out_width;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_width, Real(0));
            continue;
          }
          const Real* src = plane + static_cast<std::size_t>(ih) * g.width + shift;
          std::fill(dst, dst + r.lo, Real(0));
          if (g.stride == 1) {
            std::copy(src + r.lo, src + r.hi, dst + r.lo);
          } else {
            for (int ow = r.lo; ow < r.hi; ++ow) dst[ow] = src[ow * g.stride];
          }
          std::fill(dst + r.hi, dst + g.out_width, Real(0));
        }
      }
    }
  }
}

template <typename Real>
void col2im_add(const Real* col, const ConvGeometry& g, Real* x) {
  const int positions = g.out_height * g.out_width;
  for (int c = 0; c < g.channels; ++c) {
    Real* plane = x + static_cast<std::size_t>(c) * g.height * g.width;
    for (int kh = 0; kh < g.kernel; ++kh) {
      for (int kw = 0; kw < g.kernel; ++kw) {
        const Real* row = col + static_cast<std::size_t>((c * g.kernel + kh) * g.kernel + kw) * positions;
        const ColumnRange r = valid_columns(g, kw);
        const int shift = kw - g.padding;
        for (int oh = 0; oh < g.out_height; ++oh) {
          const int ih = oh * g.stride - g.padding + kh;
          if (ih < 0 || ih >= g.height) continue;
          const Real* src = row + static_cast<std::size_t>(oh) * g.out_width;
          Real* dst = plane + static_cast<std::size_t>(ih) * g.width + shift;
          if (g.stride == 1) {
            for (int ow = r.lo; ow < r.hi; ++ow) dst[ow] += src[ow];
          } else {
            for (int ow = r.lo; ow < r.hi; ++ow) dst[ow * g.stride] += src[ow];
          }
        }
      }
    }
  }
}

// Stride-1 convolution evaluated on a padded copy of the input. Output row oh, column ow
// maps to padded offset oh * padded_w + ow + kh * padded_w + kw, so each kernel tap is a
// contiguous shifted view and the convolution becomes k^2 GEMMs (or axpys for narrow
// groups) over a "wide" output grid whose trailing kernel-1 columns are discarded.
struct ShiftedGeometry {
  int cin;
  int cout;
  int kernel;
  int padding;
  int height;
  int width;
  int out_height;
  int out_width;

  int padded_h() const { return height + 2 * padding; }
  int padded_w() const { return width + 2 * padding; }
  Eigen::Index plane() const { return static_cast<Eigen::Index>(padded_h()) * padded_w(); }
  Eigen::Index span() const { return static_cast<Eigen::Index>(out_height) * padded_w(); }
  Eigen::Index offset(int tap) const {
    return static_cast<Eigen::Index>(tap / kernel) * padded_w() + tap % kernel;
  }
  // Shifted views run kernel-1 elements past the last plane.
  std::size_t padded_size() const { return static_cast<std::size_t>(cin * plane() + kernel); }
  bool use_gemm() const { return cin >= 8; }
};

template <typename Real>
void pad_planes(const Real* src, const ShiftedGeometry& g, Real* xp) {
  std::fill(xp, xp + g.padded_size(), Real(0));
  for (int c = 0; c < g.cin; ++c) {
    for (int h = 0; h < g.height; ++h) {
      const Real* row = src + (static_cast<std::size_t>(c) * g.height + h) * g.width;
      std::copy(row, row + g.width, xp + c * g.plane() + static_cast<Eigen::Index>(h + g.padding) * g.padded_w() + g.padding);
    }
  }
}

template <typename Real>
using StridedMap = Eigen::Map<RowMatrix<Real>, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
template <typename Real>
using ConstStridedMap = Eigen::Map<const RowMatrix<Real>, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;

// weight points at this group's (cout, cin, k, k) block; wide is cout x span.
template <typename Real>
void shifted_forward(const Real* xp, const Real* weight, const ShiftedGeometry& g, Real* wide) {
  const int taps = g.kernel * g.kernel;
  const Eigen::Index span = g.span();
  MatrixMap<Real> out(wide, g.cout, span);
  out.setZero();
  for (int t = 0; t < taps; ++t) {
    const Eigen::Index off = g.offset(t);
    if (g.use_gemm()) {
      ConstStridedMap<Real> w(weight + t, g.cout, g.cin, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(g.cin * taps, taps));
      ConstStridedMap<Real> x(xp + off, g.cin, span, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(g.plane(), 1));
      out.noalias() += w * x;
    } else {
      for (int o = 0; o < g.cout; ++o) {
        ArrayMap<Real> row(wide + o * span, span);
        for (int i = 0; i < g.cin; ++i) {
          row += weight[(o * g.cin + i) * taps + t] * ConstArrayMap<Real>(xp + i * g.plane() + off, span);
        }
      }
    }
  }
}

template <typename Real>
void shifted_backward(const Real* xp, const Real* weight, const Real* dwide, const ShiftedGeometry& g,
                      Real* weight_grad, Real* dxp) {
  const int taps = g.kernel * g.kernel;
  const Eigen::Index span = g.span();
  std::fill(dxp, dxp + g.padded_size(), Real(0));
  ConstMatrixMap<Real> dy(dwide, g.cout, span);
  for (int t = 0; t < taps; ++t) {
    const Eigen::Index off = g.offset(t);
    if (g.use_gemm()) {
      const Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic> wstride(g.cin * taps, taps);
      const Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic> xstride(g.plane(), 1);
      ConstStridedMap<Real> w(weight + t, g.cout, g.cin, wstride);
      StridedMap<Real> dw(weight_grad + t, g.cout, g.cin, wstride);
      ConstStridedMap<Real> x(xp + off, g.cin, span, xstride);
      StridedMap<Real> dx(dxp + off, g.cin, span, xstride);
      dw.noalias() += dy * x.transpose();
      dx.noalias() += w.transpose() * dy;
    } else {
      for (int o = 0; o < g.cout; ++o) {
        const ConstArrayMap<Real> d(dwide + o * span, span);
        for (int i = 0; i < g.cin; ++i) {
          const std::size_t widx = static_cast<std::size_t>((o * g.cin + i) * taps + t);
          weight_grad[widx] += static_cast<Real>(ordered_dot(dwide + o * span, xp + i * g.plane() + off, static_cast<std::size_t>(span)));
          ArrayMap<Real>(dxp + i * g.plane() + off, span) += weight[widx] * d;
        }
      }
    }
  }
}

template <typename Real>
Real stable_sigmoid(Real x) {
  if (x >= Real(0)) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

void require_same(const Shape& got, const Shape& expected, const char* what) {
  require(got == expected, ErrorKind::Shape,
          std::string(what) + ": gradient shape " + got.str() + " does not match " + expected.str());
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

template <typename Real>
Conv2d<Real>::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, int groups, bool bias)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      groups_(groups),
      has_bias_(bias) {
  require(in_ > 0 && out_ > 0 && kernel_ > 0 && stride_ > 0 && padding_ >= 0 && groups_ > 0, ErrorKind::Shape,
          "conv2d extents must be positive");
  require(in_ % groups_ == 0 && out_ % groups_ == 0, ErrorKind::Shape, "conv2d channels must be divisible by groups");
  const int fan_in = in_ / groups_ * kernel_ * kernel_;
  weight_ = Parameter<Real>(ParameterRole::Weight, fan_in, {out_, in_ / groups_, kernel_, kernel_});
  if (has_bias_) bias_ = Parameter<Real>(ParameterRole::Bias, fan_in, {out_, 1, 1, 1});
}

template <typename Real>
Shape Conv2d<Real>::output_shape(const Shape& input) const {
  require(input.c == in_, ErrorKind::Shape,
          "conv2d expects " + std::to_string(in_) + " input channels, got " + std::to_string(input.c));
  const int oh = (input.h + 2 * padding_ - kernel_) / stride_ + 1;
  const int ow = (input.w + 2 * padding_ - kernel_) / stride_ + 1;
  require(input.h + 2 * padding_ >= kernel_ && input.w + 2 * padding_ >= kernel_ && oh > 0 && ow > 0, ErrorKind::Shape,
          "conv2d input " + input.str() + " too small for kernel " + std::to_string(kernel_));
  return {input.n, out_, oh, ow};
}

template <typename Real>
Tensor<Real> Conv2d<Real>::forward(const Tensor<Real>& x, Mode /*mode*/) {
  const Shape os = output_shape(x.shape());
  input_ = x;
  Tensor<Real> y(os);
  const int cin = in_ / groups_;
  const int cout = out_ / groups_;
  const int k_rows = cin * kernel_ * kernel_;
  const int positions = os.h * os.w;
  const ConvGeometry geo{cin, x.shape().h, x.shape().w, kernel_, stride_, padding_, os.h, os.w};
  const bool direct = kernel_ == 1 && stride_ == 1 && padding_ == 0;

  if (stride_ == 1 && !direct) {
    const ShiftedGeometry sg{cin, cout, kernel_, padding_, x.shape().h, x.shape().w, os.h, os.w};
    std::vector<Real> xp(sg.padded_size());
    std::vector<Real> wide(static_cast<std::size_t>(cout * sg.span()));
    for (int n = 0; n < os.n; ++n) {
      for (int g = 0; g < groups_; ++g) {
        pad_planes(x.plane(n, g * cin), sg, xp.data());
        shifted_forward(xp.data(), weight_.value.data() + static_cast<std::size_t>(g) * cout * k_rows, sg, wide.data());
        for (int o = 0; o < cout; ++o) {
          const Real b = has_bias_ ? bias_.value[g * cout + o] : Real(0);
          Real* dst = y.plane(n, g * cout + o);
          for (int oh = 0; oh < os.h; ++oh) {
            const Real* src = wide.data() + o * sg.span() + static_cast<Eigen::Index>(oh) * sg.padded_w();
            for (int ow = 0; ow < os.w; ++ow) dst[oh * os.w + ow] = src[ow] + b;
          }
        }
      }
    }
    return y;
  }
  std::vector<Real> col(direct ? 0 : static_cast<std::size_t>(k_rows) * positions);

  for (int n = 0; n < os.n; ++n) {
    for (int g = 0; g < groups_; ++g) {
      const Real* src = x.plane(n, g * cin);
      const Real* cols = src;
      if (!direct) {
        im2col(src, geo, col.data());
        cols = col.data();
      }
      ConstMatrixMap<Real> w(weight_.value.data() + static_cast<std::size_t>(g) * cout * k_rows, cout, k_rows);
      ConstMatrixMap<Real> c(cols, k_rows, positions);
      MatrixMap<Real> out(y.plane(n, g * cout), cout, positions);
      out.noalias() = w * c;
      if (has_bias_) out.colwise() += ConstVectorMap<Real>(bias_.value.data() + g * cout, cout);
    }
  }
  return y;
}

template <typename Real>
Tensor<Real> Conv2d<Real>::backward(const Tensor<Real>& grad_output) {
  const Shape os = output_shape(input_.shape());
  require_same(grad_output.shape(), os, "conv2d");
  Tensor<Real> dx(input_.shape());
  const int cin = in_ / groups_;
  const int cout = out_ / groups_;
  const int k_rows = cin * kernel_ * kernel_;
  const int positions = os.h * os.w;
  const ConvGeometry geo{cin, input_.shape().h, input_.shape().w, kernel_, stride_, padding_, os.h, os.w};
  const bool direct = kernel_ == 1 && stride_ == 1 && padding_ == 0;

  if (stride_ == 1 && !direct) {
    const Shape is = input_.shape();
    const ShiftedGeometry sg{cin, cout, kernel_, padding_, is.h, is.w, os.h, os.w};
    std::vector<Real> xp(sg.padded_size());
    std::vector<Real> dxp(sg.padded_size());
    std::vector<Real> dwide(static_cast<std::size_t>(cout * sg.span()), Real(0));
    for (int n = 0; n < os.n; ++n) {
      for (int g = 0; g < groups_; ++g) {
        for (int o = 0; o < cout; ++o) {
          const Real* src = grad_output.plane(n, g * cout + o);
          Real sum = 0;
          for (int oh = 0; oh < os.h; ++oh) {
            Real* dst = dwide.data() + o * sg.span() + static_cast<Eigen::Index>(oh) * sg.padded_w();
            for (int ow = 0; ow < os.w; ++ow) {
              dst[ow] = src[oh * os.w + ow];
              sum += dst[ow];
            }
          }
          if (has_bias_) bias_.grad[g * cout + o] += sum;
        }
        pad_planes(input_.plane(n, g * cin), sg, xp.data());
        const std::size_t wofs = static_cast<std::size_t>(g) * cout * k_rows;
        shifted_backward(xp.data(), weight_.value.data() + wofs, dwide.data(), sg, weight_.grad.data() + wofs,
                         dxp.data());
        for (int c = 0; c < cin; ++c) {
          Real* dst = dx.plane(n, g * cin + c);
          for (int h = 0; h < is.h; ++h) {
            const Real* src = dxp.data() + c * sg.plane() + static_cast<Eigen::Index>(h + padding_) * sg.padded_w() + padding_;
            std::copy(src, src + is.w, dst + h * is.w);
          }
        }
      }
    }
    return dx;
  }

  std::vector<Real> col(direct ? 0 : static_cast<std::size_t>(k_rows) * positions);
  std::vector<Real> dcol(direct ? 0 : static_cast<std::size_t>(k_rows) * positions);

  for (int n = 0; n < os.n; ++n) {
    for (int g = 0; g < groups_; ++g) {
      const Real* src = input_.plane(n, g * cin);
      const Real* cols = src;
      if (!direct) {
        im2col(src, geo, col.data());
        cols = col.data();
      }
      ConstMatrixMap<Real> w(weight_.value.data() + static_cast<std::size_t>(g) * cout * k_rows, cout, k_rows);
      MatrixMap<Real> dw(weight_.grad.data() + static_cast<std::size_t>(g) * cout * k_rows, cout, k_rows);
      ConstMatrixMap<Real> c(cols, k_rows, positions);
      ConstMatrixMap<Real> dy(grad_output.plane(n, g * cout), cout, positions);
      dw.noalias() += dy * c.transpose();
      if (has_bias_) {
        for (int r = 0; r < cout; ++r) {
          bias_.grad[g * cout + r] += static_cast<Real>(ordered_sum(dy.row(r).data(), static_cast<std::size_t>(positions)));
        }
      }
      if (direct) {
        MatrixMap<Real> dxs(dx.plane(n, g * cin), k_rows, positions);
        dxs.noalias() += w.transpose() * dy;
      } else {
        MatrixMap<Real> dc(dcol.data(), k_rows, positions);
        dc.noalias() = w.transpose() * dy;
        col2im_add(dcol.data(), geo, dx.plane(n, g * cin));
      }
    }
  }
  return dx;
}

template <typename Real>
void Conv2d<Real>::visit_parameters(const std::string& prefix, const ParameterVisitor<Real>& visit) {
  visit(prefix + "weight", weight_);
  if (has_bias_) visit(prefix + "bias", bias_);
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <typename Real>
BatchNorm2d<Real>::BatchNorm2d(int channels, double eps, double momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      gamma_(ParameterRole::Gamma, channels, {channels, 1, 1, 1}),
      beta_(ParameterRole::Beta, channels, {channels, 1, 1, 1}),
      running_mean_({channels, 1, 1, 1}, Real(0)),
      running_var_({channels, 1, 1, 1}, Real(1)) {
  gamma_.value.fill(Real(1));
}

template <typename Real>
Tensor<Real> BatchNorm2d<Real>::forward(const Tensor<Real>& x, Mode mode) {
  const Shape s = x.shape();
  require(s.c == channels_, ErrorKind::Shape, "batchnorm channel mismatch");
  if (mode == Mode::Train) {
    require(s.n >= 2, ErrorKind::DegenerateBatch, "batch normalization needs at least 2 samples in training mode");
  }
  last_mode_ = mode;
  Tensor<Real> y(s);
  normalized_ = Tensor<Real>(s);
  inv_std_.assign(channels_, Real(0));
  const Eigen::Index plane = static_cast<Eigen::Index>(s.plane());
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);

  for (int c = 0; c < channels_; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (mode == Mode::Train) {
      for (int n = 0; n < s.n; ++n) mean += ordered_sum(x.plane(n, c), static_cast<std::size_t>(plane));
      mean /= count;
      const Real m = static_cast<Real>(mean);
      for (int n = 0; n < s.n; ++n) {
        const Real* p = x.plane(n, c);
        var += ordered_reduce<Real>(static_cast<std::size_t>(plane), [p, m](std::size_t i) { return (p[i] - m) * (p[i] - m); });
      }
      var /= count;
      running_mean_[c] = static_cast<Real>((1.0 - momentum_) * running_mean_[c] + momentum_ * mean);
      running_var_[c] = static_cast<Real>((1.0 - momentum_) * running_var_[c] + momentum_ * var * count / (count - 1.0));
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const Real inv_std = static_cast<Real>(1.0 / std::sqrt(var + eps_));
    const Real m = static_cast<Real>(mean);
    inv_std_[c] = inv_std;
    const Real gamma = gamma_.value[c];
    const Real beta = beta_.value[c];
    for (int n = 0; n < s.n; ++n) {
      ArrayMap<Real> xh(normalized_.plane(n, c), plane);
      xh = (ConstArrayMap<Real>(x.plane(n, c), plane) - m) * inv_std;
      ArrayMap<Real>(y.plane(n, c), plane) = xh * gamma + beta;
    }
  }
  return y;
}

template <typename Real>
Tensor<Real> BatchNorm2d<Real>::backward(const Tensor<Real>& grad_output) {
  const Shape s = normalized_.shape();
  require_same(grad_output.shape(), s, "batchnorm");
  Tensor<Real> dx(s);
  const Eigen::Index plane = static_cast<Eigen::Index>(s.plane());
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const ConstArrayMap<Real> dy(grad_output.plane(n, c), plane);
      const ConstArrayMap<Real> xh(normalized_.plane(n, c), plane);
      sum_dy += ordered_sum(dy.data(), static_cast<std::size_t>(plane));
      sum_dy_xhat += ordered_dot(dy.data(), xh.data(), static_cast<std::size_t>(plane));
    }
    gamma_.grad[c] += static_cast<Real>(sum_dy_xhat);
    beta_.grad[c] += static_cast<Real>(sum_dy);
    const Real scale = gamma_.value[c] * inv_std_[c];
    if (last_mode_ == Mode::Train) {
      const Real mean_dy = static_cast<Real>(sum_dy / count);
      const Real mean_dy_xhat = static_cast<Real>(sum_dy_xhat / count);
      for (int n = 0; n < s.n; ++n) {
        const ConstArrayMap<Real> dy(grad_output.plane(n, c), plane);
        const ConstArrayMap<Real> xh(normalized_.plane(n, c), plane);
        ArrayMap<Real>(dx.plane(n, c), plane) = scale * (dy - mean_dy - xh * mean_dy_xhat);
      }
    } else {
      for (int n = 0; n < s.n; ++n) {
        ArrayMap<Real>(dx.plane(n, c), plane) = scale * ConstArrayMap<Real>(grad_output.plane(n, c), plane);
      }
    }
  }
  return dx;
}

template <typename Real>
void BatchNorm2d<Real>::visit_parameters(const std::string& prefix, const ParameterVisitor<Real>& visit) {
  visit(prefix + "gamma", gamma_);
  visit(prefix + "beta", beta_);
}

template <typename Real>
void BatchNorm2d<Real>::visit_buffers(const std::string& prefix, const BufferVisitor<Real>& visit) {
  visit(prefix + "running_mean", running_mean_);
  visit(prefix + "running_var", running_var_);
}

// ---------------------------------------------------------------------------
// Elementwise activations

template <typename Real>
Tensor<Real> ReLU<Real>::forward(const Tensor<Real>& x, Mode /*mode*/) {
  output_ = Tensor<Real>(x.shape());
  const Eigen::Index n = static_cast<Eigen::Index>(x.size());
  ArrayMap<Real>(output_.data(), n) = ConstArrayMap<Real>(x.data(), n).max(Real(0));
  return output_;
}

template <typename Real>
Tensor<Real> ReLU<Real>::backward(const Tensor<Real>& grad_output) {
  require_same(grad_output.shape(), output_.shape(), "relu");
  Tensor<Real> dx(grad_output.shape());
  const Eigen::Index n = static_cast<Eigen::Index>(dx.size());
  ArrayMap<Real>(dx.data(), n) =
      (ConstArrayMap<Real>(output_.data(), n) > Real(0)).select(ConstArrayMap<Real>(grad_output.data(), n), Real(0));
  return dx;
}

template <typename Real>
Tensor<Real> Sigmoid<Real>::forward(const Tensor<Real>& x, Mode /*mode*/) {
  output_ = x;
  for (Real& v : output_.values()) v = stable_sigmoid(v);
  return output_;
}

template <typename Real>
Tensor<Real> Sigmoid<Real>::backward(const Tensor<Real>& grad_output) {
  require_same(grad_output.shape(), output_.shape(), "sigmoid");
  Tensor<Real> dx = grad_output;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= output_[i] * (Real(1) - output_[i]);
  return dx;
}

// ---------------------------------------------------------------------------
// Pooling, flatten, linear

template <typename Real>
MaxPool2d<Real>::MaxPool2d(int kernel_h, int kernel_w) : kh_(kernel_h), kw_(kernel_w) {
  require(kh_ > 0 && kw_ > 0, ErrorKind::Shape, "max pool window must be positive");
}

template <typename Real>
Shape MaxPool2d<Real>::output_shape(const Shape& input) const {
  require(input.h >= kh_ && input.w >= kw_, ErrorKind::Shape, "max pool window larger than input " + input.str());
  return {input.n, input.c, input.h / kh_, input.w / kw_};
}

template <typename Real>
Tensor<Real> MaxPool2d<Real>::forward(const Tensor<Real>& x, Mode /*mode*/) {
  const Shape os = output_shape(x.shape());
  const Shape is = x.shape();
  input_shape_ = is;
  Tensor<Real> y(os);
  argmax_.assign(os.count(), 0);
  std::size_t o = 0;
  for (int n = 0; n < os.n; ++n) {
    for (int c = 0; c < os.c; ++c) {
      const std::size_t base = x.offset(n, c, 0, 0);
      const Real* plane = x.data() + base;
      for (int oh = 0; oh < os.h; ++oh) {
        for (int ow = 0; ow < os.w; ++ow, ++o) {
          std::size_t best = static_cast<std::size_t>(oh * kh_) * is.w + static_cast<std::size_t>(ow * kw_);
          for (int i = 0; i < kh_; ++i) {
            const std::size_t row = static_cast<std::size_t>(oh * kh_ + i) * is.w;
            for (int j = 0; j < kw_; ++j) {
              const std::size_t idx = row + static_cast<std::size_t>(ow * kw_ + j);
              if (plane[idx] > plane[best]) best = idx;
            }
          }
          argmax_[o] = base + best;
          y[o] = plane[best];
        }
      }
    }
  }
  return y;
}

template <typename Real>
Tensor<Real> MaxPool2d<Real>::backward(const Tensor<Real>& grad_output) {
  require(grad_output.size() == argmax_.size(), ErrorKind::Shape, "max pool gradient shape mismatch");
  Tensor<Real> dx(input_shape_);
  for (std::size_t o = 0; o < argmax_.size(); ++o) dx[argmax_[o]] += grad_output[o];
  return dx;
}

template <typename Real>
Tensor<Real> AdaptiveAvgPool<Real>::forward(const Tensor<Real>& x, Mode /*mode*/) {
  input_shape_ = x.shape();
  const Shape s = x.shape();
  Tensor<Real> y(output_shape(s));
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const Real* p = x.plane(n, c);
      double sum = 0.0;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      y.at(n, c, 0, 0) = static_cast<Real>(sum / static_cast<double>(plane));
    }
  }
  return y;
}

template <typename Real>
Tensor<Real> AdaptiveAvgPool<Real>::backward(const Tensor<Real>& grad_output) {
  require_same(grad_output.shape(), output_shape(input_shape_), "adaptive average pool");
  Tensor<Real> dx(input_shape_);
  const std::size_t plane = input_shape_.plane();
  const Real scale = Real(1) / static_cast<Real>(plane);
  for (int n = 0; n < input_shape_.n; ++n) {
    for (int c = 0; c < input_shape_.c; ++c) {
      const Real g = grad_output.at(n, c, 0, 0) * scale;
      Real* p = dx.plane(n, c);
      std::fill(p, p + plane, g);
    }
  }
  return dx;
}

template <typename Real>
Tensor<Real> Flatten<Real>::forward(const Tensor<Real>& x, Mode /*mode*/) {
  input_shape_ = x.shape();
  return x.reshaped(output_shape(x.shape()));
}

template <typename Real>
Tensor<Real> Flatten<Real>::backward(const Tensor<Real>& grad_output) {
  return grad_output.reshaped(input_shape_);
}

template <typename Real>
Linear<Real>::Linear(int in_features, int out_features)
    : in_(in_features),
      out_(out_features),
      weight_(ParameterRole::Weight, in_features, {out_features, in_features, 1, 1}),
      bias_(ParameterRole::Bias, in_features, {out_features, 1, 1, 1}) {
  require(in_ > 0 && out_ > 0, ErrorKind::Shape, "linear extents must be positive");
}

template <typename Real>
Shape Linear<Real>::output_shape(const Shape& input) const {
  require(static_cast<long>(input.c) * input.h * input.w == in_, ErrorKind::Shape,
          "linear expects " + std::to_string(in_) + " features, got " + input.str());
  return {input.n, out_, 1, 1};
}

template <typename Real>
Tensor<Real> Linear<Real>::forward(const Tensor<Real>& x, Mode /*mode*/) {
  const Shape os = output_shape(x.shape());
  input_ = x;
  Tensor<Real> y(os);
  // Row by row so a sample's logits do not depend on the batch it arrives in.
  const std::size_t width = static_cast<std::size_t>(in_);
  for (int n = 0; n < os.n; ++n) {
    const Real* row = x.data() + static_cast<std::size_t>(n) * width;
    for (int o = 0; o < out_; ++o) {
      const double dot = ordered_dot(row, weight_.value.data() + static_cast<std::size_t>(o) * width, width);
      y[static_cast<std::size_t>(n) * out_ + o] = static_cast<Real>(dot + static_cast<double>(bias_.value[o]));
    }
  }
  return y;
}

template <typename Real>
Tensor<Real> Linear<Real>::backward(const Tensor<Real>& grad_output) {
  const Shape os = output_shape(input_.shape());
  require_same(grad_output.shape(), os, "linear");
  Tensor<Real> dx(input_.shape());
  ConstMatrixMap<Real> in(input_.data(), os.n, in_);
  ConstMatrixMap<Real> w(weight_.value.data(), out_, in_);
  ConstMatrixMap<Real> dy(grad_output.data(), os.n, out_);
  MatrixMap<Real> dw(weight_.grad.data(), out_, in_);
  dw.noalias() += dy.transpose() * in;
  for (int n = 0; n < os.n; ++n) {
    for (int o = 0; o < out_; ++o) bias_.grad[o] += dy(n, o);
  }
  MatrixMap<Real> dxm(dx.data(), os.n, in_);
  dxm.noalias() = dy * w;
  return dx;
}

template <typename Real>
void Linear<Real>::visit_parameters(const std::string& prefix, const ParameterVisitor<Real>& visit) {
  visit(prefix + "weight", weight_);
  visit(prefix + "bias", bias_);
}

// ---------------------------------------------------------------------------
// SpatialAttention

template <typename Real>
SpatialAttention<Real>::SpatialAttention(int kernel) : conv_(2, 1, kernel, 1, kernel / 2, 1, true) {
  require(kernel % 2 == 1, ErrorKind::Shape, "spatial attention kernel must be odd");
}

template <typename Real>
Tensor<Real> SpatialAttention<Real>::forward(const Tensor<Real>& x, Mode mode) {
  const Shape s = x.shape();
  input_ = x;
  Tensor<Real> pooled({s.n, 2, s.h, s.w});
  max_channel_.assign(static_cast<std::size_t>(s.n) * s.plane(), 0);
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    Real* avg = pooled.plane(n, 0);
    Real* mx = pooled.plane(n, 1);
    for (std::size_t i = 0; i < plane; ++i) {
      double sum = 0.0;
      Real best = -std::numeric_limits<Real>::infinity();
      int best_c = 0;
      for (int c = 0; c < s.c; ++c) {
        const Real v = x.plane(n, c)[i];
        sum += v;
        if (v > best) {
          best = v;
          best_c = c;
        }
      }
      avg[i] = static_cast<Real>(sum / s.c);
      mx[i] = best;
      max_channel_[n * plane + i] = best_c;
    }
  }
  mask_ = conv_.forward(pooled, mode);
  for (Real& v : mask_.values()) v = stable_sigmoid(v);

  Tensor<Real> y(s);
  for (int n = 0; n < s.n; ++n) {
    const Real* m = mask_.plane(n, 0);
    for (int c = 0; c < s.c; ++c) {
      const Real* in = x.plane(n, c);
      Real* out = y.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) out[i] = in[i] * m[i];
    }
  }
  return y;
}

template <typename Real>
Tensor<Real> SpatialAttention<Real>::backward(const Tensor<Real>& grad_output) {
  const Shape s = input_.shape();
  require_same(grad_output.shape(), s, "spatial attention");
  const std::size_t plane = s.plane();
  Tensor<Real> dx(s);
  Tensor<Real> dlogit({s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    const Real* m = mask_.plane(n, 0);
    Real* dl = dlogit.plane(n, 0);
    for (int c = 0; c < s.c; ++c) {
      const Real* g = grad_output.plane(n, c);
      const Real* in = input_.plane(n, c);
      Real* d = dx.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        d[i] = g[i] * m[i];
        dl[i] += g[i] * in[i];
      }
    }
    for (std::size_t i = 0; i < plane; ++i) dl[i] *= m[i] * (Real(1) - m[i]);
  }
  const Tensor<Real> dpooled = conv_.backward(dlogit);
  const Real inv_c = Real(1) / static_cast<Real>(s.c);
  for (int n = 0; n < s.n; ++n) {
    const Real* davg = dpooled.plane(n, 0);
    const Real* dmax = dpooled.plane(n, 1);
    for (int c = 0; c < s.c; ++c) {
      Real* d = dx.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) d[i] += davg[i] * inv_c;
    }
    for (std::size_t i = 0; i < plane; ++i) dx.plane(n, max_channel_[n * plane + i])[i] += dmax[i];
  }
  return dx;
}

template <typename Real>
void SpatialAttention<Real>::visit_parameters(const std::string& prefix, const ParameterVisitor<Real>& visit) {
  conv_.visit_parameters(prefix + "conv.", visit);
}

// ---------------------------------------------------------------------------
// ResNeXtBlock

template <typename Real>
ResNeXtBlock<Real>::ResNeXtBlock(int in_channels, int mid_channels, int out_channels, int groups, int stride)
    : reduce_(in_channels, mid_channels, 1, 1, 0, 1, false),
      reduce_bn_(mid_channels),
      grouped_(mid_channels, mid_channels, 3, stride, 1, groups, false),
      grouped_bn_(mid_channels),
      expand_(mid_channels, out_channels, 1, 1, 0, 1, false),
      expand_bn_(out_channels) {
  if (stride != 1 || in_channels != out_channels) {
    projection_ = std::make_unique<Conv2d<Real>>(in_channels, out_channels, 1, stride, 0, 1, false);
    projection_bn_ = std::make_unique<BatchNorm2d<Real>>(out_channels);
  }
}

template <typename Real>
Shape ResNeXtBlock<Real>::output_shape(const Shape& input) const {
  const Shape main = expand_.output_shape(grouped_.output_shape(reduce_.output_shape(input)));
  if (projection_) {
    require(projection_->output_shape(input) == main, ErrorKind::Shape, "shortcut shape mismatch");
  } else {
    require(input == main, ErrorKind::Shape, "identity shortcut requires matching shapes");
  }
  return main;
}

template <typename Real>
Tensor<Real> ResNeXtBlock<Real>::forward(const Tensor<Real>& x, Mode mode) {
  Tensor<Real> h = reduce_relu_.forward(reduce_bn_.forward(reduce_.forward(x, mode), mode), mode);
  h = grouped_relu_.forward(grouped_bn_.forward(grouped_.forward(h, mode), mode), mode);
  h = expand_bn_.forward(expand_.forward(h, mode), mode);
  if (projection_) {
    const Tensor<Real> shortcut = projection_bn_->forward(projection_->forward(x, mode), mode);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += shortcut[i];
  } else {
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += x[i];
  }
  return out_relu_.forward(h, mode);
}

template <typename Real>
Tensor<Real> ResNeXtBlock<Real>::backward(const Tensor<Real>& grad_output) {
  const Tensor<Real> g = out_relu_.backward(grad_output);
  Tensor<Real> d = expand_.backward(expand_bn_.backward(g));
  d = grouped_.backward(grouped_bn_.backward(grouped_relu_.backward(d)));
  d = reduce_.backward(reduce_bn_.backward(reduce_relu_.backward(d)));
  if (projection_) {
    const Tensor<Real> ds = projection_->backward(projection_bn_->backward(g));
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += ds[i];
  } else {
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
  }
  return d;
}

template <typename Real>
void ResNeXtBlock<Real>::visit_parameters(const std::string& prefix, const ParameterVisitor<Real>& visit) {
  reduce_.visit_parameters(prefix + "reduce.", visit);
  reduce_bn_.visit_parameters(prefix + "reduce_bn.", visit);
  grouped_.visit_parameters(prefix + "grouped.", visit);
  grouped_bn_.visit_parameters(prefix + "grouped_bn.", visit);
  expand_.visit_parameters(prefix + "expand.", visit);
  expand_bn_.visit_parameters(prefix + "expand_bn.", visit);
  if (projection_) {
    projection_->visit_parameters(prefix + "projection.", visit);
    projection_bn_->visit_parameters(prefix + "projection_bn.", visit);
  }
}

template <typename Real>
void ResNeXtBlock<Real>::visit_buffers(const std::string& prefix, const BufferVisitor<Real>& visit) {
  reduce_bn_.visit_buffers(prefix + "reduce_bn.", visit);
  grouped_bn_.visit_buffers(prefix + "grouped_bn.", visit);
  expand_bn_.visit_buffers(prefix + "expand_bn.", visit);
  if (projection_bn_) projection_bn_->visit_buffers(prefix + "projection_bn.", visit);
}

// ---------------------------------------------------------------------------
// Sequential

template <typename Real>
Shape Sequential<Real>::output_shape(const Shape& input) const {
  Shape s = input;
  for (const auto& layer : layers_) s = layer->output_shape(s);
  return s;
}

template <typename Real>
Tensor<Real> Sequential<Real>::forward(const Tensor<Real>& x, Mode mode) {
  Tensor<Real> h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, mode);
    if (finite_checks_ && !h.all_finite()) {
      fail(ErrorKind::Divergence, "non-finite activation after layer " + std::to_string(i));
    }
  }
  return h;
}

template <typename Real>
Tensor<Real> Sequential<Real>::backward(const Tensor<Real>& grad_output) {
  Tensor<Real> g = grad_output;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i]->backward(g);
    if (finite_checks_ && !g.all_finite()) {
      fail(ErrorKind::Divergence, "non-finite gradient entering layer " + std::to_string(i));
    }
  }
  return g;
}

template <typename Real>
void Sequential<Real>::visit_parameters(const std::string& prefix, const ParameterVisitor<Real>& visit) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->visit_parameters(prefix + std::to_string(i) + ".", visit);
}

template <typename Real>
void Sequential<Real>::visit_buffers(const std::string& prefix, const BufferVisitor<Real>& visit) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->visit_buffers(prefix + std::to_string(i) + ".", visit);
}

template <typename Real>
std::vector<Parameter<Real>*> parameter_list(Layer<Real>& layer) {
  std::vector<Parameter<Real>*> out;
  layer.visit_parameters("", [&](const std::string&, Parameter<Real>& p) { out.push_back(&p); });
  return out;
}

template <typename Real>
void zero_gradients(Layer<Real>& layer) {
  layer.visit_parameters("", [](const std::string&, Parameter<Real>& p) { p.zero_grad(); });
}

template <typename Real>
void initialize_parameters(Layer<Real>& layer, std::uint64_t seed) {
  std::uint64_t index = 0;
  layer.visit_parameters("", [&](const std::string&, Parameter<Real>& p) {
    std::mt19937_64 rng(derive_seed({seed, index++}));
    switch (p.role) {
      case ParameterRole::Weight: {
        const double bound = std::sqrt(6.0 / std::max(1, p.fan_in));
        std::uniform_real_distribution<double> uniform(-bound, bound);
        for (Real& v : p.value.values()) v = static_cast<Real>(uniform(rng));
        break;
      }
      case ParameterRole::Bias:
      case ParameterRole::Beta: p.value.fill(Real(0)); break;
      case ParameterRole::Gamma: p.value.fill(Real(1)); break;
    }
    p.zero_grad();
  });
}

#define WKPNET_INSTANTIATE_LAYERS(Real)                                         \
  template class Conv2d<Real>;                                                  \
  template class BatchNorm2d<Real>;                                             \
  template class ReLU<Real>;                                                    \
  template class Sigmoid<Real>;                                                 \
  template class MaxPool2d<Real>;                                               \
  template class AdaptiveAvgPool<Real>;                                         \
  template class Flatten<Real>;                                                 \
  template class Linear<Real>;                                                  \
  template class SpatialAttention<Real>;                                        \
  template class ResNeXtBlock<Real>;                                            \
  template class Sequential<Real>;                                              \
  template std::vector<Parameter<Real>*> parameter_list<Real>(Layer<Real>&);    \
  template void zero_gradients<Real>(Layer<Real>&);                             \
  template void initialize_parameters<Real>(Layer<Real>&, std::uint64_t);

WKPNET_INSTANTIATE_LAYERS(float)
WKPNET_INSTANTIATE_LAYERS(double)

#undef WKPNET_INSTANTIATE_LAYERS

}  // namespace wkpnet::nn
