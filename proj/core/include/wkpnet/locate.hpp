#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "wkpnet/signalgen.hpp"

namespace wkpnet::locate {

using signal::Coordinate;

struct PositionEstimate {
  std::vector<double> confidences;
  Coordinate estimate;
  Coordinate truth;
  double error = 0.0;
};

/// p = softmax(z) at T = 1; estimate = sum_i p(i) * coords[i].
PositionEstimate estimate_position(std::span<const double> logits, std::span<const Coordinate> coords,
                                   Coordinate truth = {});

struct CdfPoint {
  double threshold = 0.0;
  double fraction = 0.0;
};

struct MetricsSummary {
  double mde = 0.0;
  /// Population standard deviation of the errors.
  double std = 0.0;
  /// Fixed lattice over [0, max error].
  std::vector<CdfPoint> cdf;
  /// Exact empirical CDF: one point per distinct sorted error.
  std::vector<CdfPoint> exact_cdf;

  /// Fraction of errors <= threshold, read from the exact CDF.
  double cdf_at(double threshold) const;
};

inline constexpr int kDefaultCdfPoints = 200;

MetricsSummary summarize_errors(std::span<const double> errors, int lattice_points = kDefaultCdfPoints);
MetricsSummary summarize(std::span<const PositionEstimate> estimates, int lattice_points = kDefaultCdfPoints);

/// threshold,fraction rows for the lattice, a blank line, the exact table, then mde,std.
void write_metrics_csv(std::ostream& out, const MetricsSummary& summary);

}  // namespace wkpnet::locate
