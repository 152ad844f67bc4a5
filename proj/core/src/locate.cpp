#include "wkpnet/locate.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "wkpnet/error.hpp"
#include "wkpnet/nn/losses.hpp"

namespace wkpnet::locate {

PositionEstimate estimate_position(std::span<const double> logits, std::span<const Coordinate> coords,
                                   Coordinate truth) {
  require(logits.size() == coords.size(), ErrorKind::Shape,
          "got " + std::to_string(logits.size()) + " logits for " + std::to_string(coords.size()) + " grid points");
  PositionEstimate e;
  e.confidences = nn::softened_softmax(logits, 1.0);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    e.estimate.x += e.confidences[i] * coords[i].x;
    e.estimate.y += e.confidences[i] * coords[i].y;
  }
  e.truth = truth;
  e.error = std::hypot(e.estimate.x - truth.x, e.estimate.y - truth.y);
  return e;
}

double MetricsSummary::cdf_at(double threshold) const {
  double fraction = 0.0;
  for (const CdfPoint& p : exact_cdf) {
    if (p.threshold > threshold) break;
    fraction = p.fraction;
  }
  return fraction;
}

MetricsSummary summarize_errors(std::span<const double> errors, int lattice_points) {
  require(!errors.empty(), ErrorKind::EmptySet, "cannot summarize an empty set of estimates");
  require(lattice_points >= 2, ErrorKind::Parameter, "CDF lattice needs at least 2 points");
  std::vector<double> sorted(errors.begin(), errors.end());
  for (double e : sorted) require(std::isfinite(e) && e >= 0.0, ErrorKind::RejectedInput, "invalid distance error");
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());

  MetricsSummary s;
  double sum = 0.0;
  for (double e : sorted) sum += e;
  s.mde = sum / n;
  double sq = 0.0;
  for (double e : sorted) sq += (e - s.mde) * (e - s.mde);
  s.std = std::sqrt(sq / n);

  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
    s.exact_cdf.push_back({sorted[i], static_cast<double>(i + 1) / n});
  }

  const double max_error = sorted.back();
  std::size_t below = 0;
  for (int k = 0; k < lattice_points; ++k) {
    const double threshold = k == lattice_points - 1 ? max_error : max_error * k / (lattice_points - 1);
    while (below < sorted.size() && sorted[below] <= threshold) ++below;
    s.cdf.push_back({threshold, static_cast<double>(below) / n});
  }
  return s;
}

MetricsSummary summarize(std::span<const PositionEstimate> estimates, int lattice_points) {
  std::vector<double> errors;
  errors.reserve(estimates.size());
  for (const PositionEstimate& e : estimates) errors.push_back(e.error);
  return summarize_errors(errors, lattice_points);
}

void write_metrics_csv(std::ostream& out, const MetricsSummary& summary) {
  out.precision(9);
  out << "threshold,fraction\n";
  for (const CdfPoint& p : summary.cdf) out << p.threshold << ',' << p.fraction << '\n';
  out << "\nthreshold,fraction\n";
  for (const CdfPoint& p : summary.exact_cdf) out << p.threshold << ',' << p.fraction << '\n';
  out << "\nmde,std\n" << summary.mde << ',' << summary.std << '\n';
}

}  // namespace wkpnet::locate
