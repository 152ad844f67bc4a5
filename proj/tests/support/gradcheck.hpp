#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "wkpnet/nn/layers.hpp"
#include "wkpnet/nn/tensor.hpp"

namespace wkpnet::testing {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t probes = 0;
  // Filled only when zeros are checked separately: probes whose analytic value is zero
  // to roundoff, and the largest central difference seen at one of them.
  std::size_t exact_zeros = 0;
  double max_zero_residual = 0.0;
};

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::max(std::abs(analytic), std::abs(numeric)) + 1e-8);
}

inline void note(GradCheckReport& report, double analytic, double numeric, const std::string& where,
                 bool separate_zeros = false) {
  if (separate_zeros && std::abs(analytic) < 1e-12) {
    ++report.exact_zeros;
    report.max_zero_residual = std::max(report.max_zero_residual, std::abs(numeric));
    return;
  }
  const double e = rel_error(analytic, numeric);
  ++report.probes;
  if (e > report.max_rel_error) {
    report.max_rel_error = e;
    std::ostringstream text;
    text << where << " analytic=" << std::setprecision(6) << analytic << " numeric=" << numeric;
    report.worst = text.str();
  }
}

inline nn::Tensor<double> random_tensor(const nn::Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  nn::Tensor<double> t(shape);
  std::normal_distribution<double> dist(0.0, scale);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

/// Values whose pairwise gaps and distance from zero all exceed `gap`, so a central
/// difference of 1e-3 never crosses a ReLU kink or a max-pool tie.
inline nn::Tensor<double> separated_tensor(const nn::Shape& shape, std::mt19937_64& rng, double gap = 0.01) {
  nn::Tensor<double> t(shape);
  const std::size_t n = t.size();
  std::vector<double> pool(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double k = static_cast<double>(i) - static_cast<double>(n) / 2.0;
    pool[i] = (k + (k >= 0 ? 0.5 : -0.5)) * gap * 1.5;
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  std::copy(pool.begin(), pool.end(), t.data());
  return t;
}

/// Pins every BN affine pair inside a bottleneck block so no ReLU input can reach zero.
/// A normalized value never exceeds sqrt(count - 1) in magnitude, so with gamma = 1 a
/// beta of +-(bound + 1) leaves each channel fully on or fully off. Inner channels are
/// switched at random, the output branch is held on. A 1e-3 step then never crosses a kink.
/// Every conv feeds a batch norm, so its weights are also scaled up: the block output is
/// unchanged while a fixed step becomes a smaller relative move, shrinking the second-order
/// error of the difference.
inline void settle_block_activations(nn::Layer<double>& block, int batch_pixels, std::uint64_t seed) {
  const double beta = std::sqrt(static_cast<double>(batch_pixels - 1)) + 1.0;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution on(0.6);
  block.visit_parameters("", [&](const std::string& name, nn::Parameter<double>& p) {
    const bool inner = name.rfind("reduce_bn.", 0) == 0 || name.rfind("grouped_bn.", 0) == 0;
    const bool outer = name.rfind("expand_bn.", 0) == 0 || name.rfind("projection_bn.", 0) == 0;
    if (!inner && !outer) {
      if (p.role == nn::ParameterRole::Weight) {
        for (double& v : p.value.values()) v *= 8.0;
      }
      return;
    }
    const bool is_gamma = name.size() >= 5 && name.compare(name.size() - 5, 5, "gamma") == 0;
    for (double& v : p.value.values()) {
      if (is_gamma) {
        v = 1.0;
      } else if (inner) {
        v = on(rng) ? beta : -beta;
      } else {
        v = beta;
      }
    }
  });
}

/// Probes up to `budget` coordinates of a tensor (all of them when it is small).
inline std::vector<std::size_t> probe_indices(std::size_t size, std::size_t budget, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(size);
  for (std::size_t i = 0; i < size; ++i) idx[i] = i;
  if (size > budget) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(budget);
  }
  return idx;
}

/// Central differences of L = sum(r * layer(x)) against the analytic input and
/// parameter gradients. The layer runs in `mode` for every evaluation.
/// With `separate_zeros`, coordinates whose analytic gradient vanishes (for instance a
/// shift that a later batch norm removes) are held to an absolute bound via the report
/// instead of a relative error, which at an exact zero only measures roundoff.
inline GradCheckReport check_layer(nn::Layer<double>& layer, nn::Tensor<double> x, nn::Mode mode,
                                   std::uint64_t seed, double eps = 1e-3, std::size_t budget = 150,
                                   bool separate_zeros = false) {
  std::mt19937_64 rng(seed);
  const nn::Tensor<double> y0 = layer.forward(x, mode);
  const nn::Tensor<double> r = random_tensor(y0.shape(), rng);

  nn::zero_gradients(layer);
  layer.forward(x, mode);
  const nn::Tensor<double> dx = layer.backward(r);
  std::vector<std::pair<std::string, nn::Parameter<double>*>> params;
  layer.visit_parameters("", [&](const std::string& name, nn::Parameter<double>& p) { params.emplace_back(name, &p); });
  std::vector<nn::Tensor<double>> analytic;
  for (auto& [name, p] : params) analytic.push_back(p->grad);

  auto difference = [&](const std::function<void(double)>& set) {
    set(eps);
    const nn::Tensor<double> plus = layer.forward(x, mode);
    set(-eps);
    const nn::Tensor<double> minus = layer.forward(x, mode);
    set(0.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < plus.size(); ++i) acc += r[i] * (plus[i] - minus[i]);
    return acc / (2.0 * eps);
  };

  GradCheckReport report;
  for (std::size_t i : probe_indices(x.size(), budget, rng)) {
    const double base = x[i];
    const double numeric = difference([&](double d) { x[i] = base + d; });
    note(report, dx[i], numeric, "input[" + std::to_string(i) + "]", separate_zeros);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    nn::Tensor<double>& value = params[k].second->value;
    for (std::size_t i : probe_indices(value.size(), budget, rng)) {
      const double base = value[i];
      const double numeric = difference([&](double d) { value[i] = base + d; });
      note(report, analytic[k][i], numeric, params[k].first + "[" + std::to_string(i) + "]", separate_zeros);
    }
  }
  return report;
}

}  // namespace wkpnet::testing
