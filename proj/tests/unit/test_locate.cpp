#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <sstream>

#include "wkpnet/error.hpp"
#include "wkpnet/locate.hpp"

using namespace wkpnet;
using namespace wkpnet::locate;

namespace {

std::vector<Coordinate> unit_square() { return {{0, 0}, {1, 0}, {0, 1}, {1, 1}}; }

std::vector<Coordinate> random_grid(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<Coordinate> coords(n);
  for (auto& c : coords) c = {u(rng), u(rng)};
  return coords;
}

void check_cdf_shape(const MetricsSummary& s) {
  for (const auto* table : {&s.cdf, &s.exact_cdf}) {
    REQUIRE(!table->empty());
    for (std::size_t i = 1; i < table->size(); ++i) {
      CHECK((*table)[i].fraction >= (*table)[i - 1].fraction);
      CHECK((*table)[i].threshold >= (*table)[i - 1].threshold);
    }
    CHECK(table->back().fraction == 1.0);
  }
}

}  // namespace

TEST_SUITE("locate") {
  TEST_CASE("two point oracle") {
    const std::vector<double> z{std::log(3.0), std::log(1.0)};
    const std::vector<Coordinate> coords{{0, 0}, {1, 0}};
    const auto e = estimate_position(z, coords);
    CHECK(std::abs(e.confidences[0] - 0.75) < 1e-12);
    CHECK(std::abs(e.confidences[1] - 0.25) < 1e-12);
    CHECK(std::abs(e.estimate.x - 0.25) < 1e-12);
    CHECK(std::abs(e.estimate.y) < 1e-12);
    CHECK(std::abs(e.error - 0.25) < 1e-12);
  }

  TEST_CASE("equal logits land on the centroid") {
    const auto e = estimate_position(std::vector<double>(4, 2.5), unit_square(), {0.5, 0.5});
    CHECK(std::abs(e.estimate.x - 0.5) < 1e-12);
    CHECK(std::abs(e.estimate.y - 0.5) < 1e-12);
    CHECK(e.error < 1e-12);
  }

  TEST_CASE("dominant logit saturates on its grid point") {
    const auto coords = unit_square();
    for (std::size_t k = 0; k < coords.size(); ++k) {
      std::vector<double> z(coords.size(), 0.0);
      z[k] = 100.0;
      const auto e = estimate_position(z, coords, coords[k]);
      CHECK(e.error < 1e-6);
    }
  }

  TEST_CASE("estimate properties over random logits") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> d(0.0, 3.0);
    for (int trial = 0; trial < 200; ++trial) {
      const int n = 2 + trial % 30;
      const auto coords = random_grid(rng, n);
      std::vector<double> z(n);
      for (double& v : z) v = d(rng);
      const Coordinate truth{d(rng), d(rng)};
      const auto e = estimate_position(z, coords, truth);

      double sum = 0.0;
      for (double p : e.confidences) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        sum += p;
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);

      const auto [xmin, xmax] = std::minmax_element(coords.begin(), coords.end(), [](auto a, auto b) { return a.x < b.x; });
      const auto [ymin, ymax] = std::minmax_element(coords.begin(), coords.end(), [](auto a, auto b) { return a.y < b.y; });
      CHECK(e.estimate.x >= xmin->x - 1e-12);
      CHECK(e.estimate.x <= xmax->x + 1e-12);
      CHECK(e.estimate.y >= ymin->y - 1e-12);
      CHECK(e.estimate.y <= ymax->y + 1e-12);
      CHECK(e.error == std::hypot(e.estimate.x - truth.x, e.estimate.y - truth.y));

      std::vector<double> shifted(z);
      for (double& v : shifted) v += 41.7;
      const auto s = estimate_position(shifted, coords, truth);
      CHECK(std::hypot(s.estimate.x - e.estimate.x, s.estimate.y - e.estimate.y) < 1e-9);
    }
  }

  TEST_CASE("length mismatch is a shape error") {
    try {
      estimate_position(std::vector<double>(3, 0.0), unit_square());
      FAIL("expected a shape error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Shape);
    }
  }

  TEST_CASE("metric hand examples") {
    const auto ones = summarize_errors(std::vector<double>{1, 1, 1});
    CHECK(ones.mde == 1.0);
    CHECK(ones.std == 0.0);
    CHECK(ones.cdf_at(1.0) == 1.0);
    CHECK(ones.cdf_at(0.999) == 0.0);

    const auto pair = summarize_errors(std::vector<double>{0, 2});
    CHECK(pair.mde == 1.0);
    CHECK(pair.std == 1.0);
    CHECK(pair.cdf_at(1.0) == 0.5);
    CHECK(pair.cdf_at(2.0) == 1.0);
    CHECK(pair.cdf_at(0.0) == 0.5);

    const auto perfect = summarize_errors(std::vector<double>(5, 0.0));
    CHECK(perfect.mde == 0.0);
    CHECK(perfect.std == 0.0);
    for (double t : {0.0, 0.5, 10.0}) CHECK(perfect.cdf_at(t) == 1.0);
    check_cdf_shape(perfect);
  }

  TEST_CASE("lattice spans zero to the largest error") {
    const auto s = summarize_errors(std::vector<double>{0.5, 1.5, 3.0}, 7);
    REQUIRE(s.cdf.size() == 7);
    CHECK(s.cdf.front().threshold == 0.0);
    CHECK(s.cdf.back().threshold == 3.0);
    CHECK(s.cdf[1].threshold == 0.5);
    CHECK(s.cdf[1].fraction == doctest::Approx(1.0 / 3.0));
    CHECK(s.exact_cdf.size() == 3);
    CHECK(summarize_errors(std::vector<double>{1.0}).cdf.size() == kDefaultCdfPoints);
  }

  TEST_CASE("summaries are permutation invariant with monotone CDFs") {
    std::mt19937_64 rng(23);
    std::exponential_distribution<double> d(0.7);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> errors(1 + trial * 3);
      for (double& e : errors) e = trial % 5 == 0 ? std::round(d(rng)) : d(rng);
      const auto a = summarize_errors(errors);
      check_cdf_shape(a);
      CHECK(a.mde >= 0.0);
      CHECK(a.std >= 0.0);
      std::shuffle(errors.begin(), errors.end(), rng);
      const auto b = summarize_errors(errors);
      CHECK(a.mde == doctest::Approx(b.mde).epsilon(1e-12));
      CHECK(a.std == doctest::Approx(b.std).epsilon(1e-12));
      REQUIRE(a.cdf.size() == b.cdf.size());
      for (std::size_t i = 0; i < a.cdf.size(); ++i) CHECK(a.cdf[i].fraction == b.cdf[i].fraction);
      REQUIRE(a.exact_cdf.size() == b.exact_cdf.size());
      for (std::size_t i = 0; i < a.exact_cdf.size(); ++i) CHECK(a.exact_cdf[i].threshold == b.exact_cdf[i].threshold);
    }
  }

  TEST_CASE("summarize reads errors from estimates") {
    const std::vector<Coordinate> coords{{0, 0}, {2, 0}};
    std::vector<PositionEstimate> estimates{estimate_position(std::vector<double>{100, 0}, coords, {0, 0}),
                                            estimate_position(std::vector<double>{0, 0}, coords, {3, 0})};
    const auto s = summarize(estimates);
    CHECK(s.mde == doctest::Approx(1.0));
    CHECK(s.std == doctest::Approx(1.0));
  }

  TEST_CASE("empty and invalid inputs") {
    auto kind = [](auto&& f) {
      try {
        f();
      } catch (const Error& e) {
        return std::optional<ErrorKind>(e.kind());
      }
      return std::optional<ErrorKind>();
    };
    CHECK(kind([] { summarize_errors(std::vector<double>{}); }) == ErrorKind::EmptySet);
    CHECK(kind([] { summarize(std::vector<PositionEstimate>{}); }) == ErrorKind::EmptySet);
    CHECK(kind([] { summarize_errors(std::vector<double>{-1.0}); }) == ErrorKind::RejectedInput);
    CHECK(kind([] { summarize_errors(std::vector<double>{NAN}); }) == ErrorKind::RejectedInput);
  }

  TEST_CASE("metrics csv layout") {
    std::ostringstream out;
    write_metrics_csv(out, summarize_errors(std::vector<double>{0, 2}, 3));
    CHECK(out.str() ==
          "threshold,fraction\n0,0.5\n1,0.5\n2,1\n"
          "\nthreshold,fraction\n0,0.5\n2,1\n"
          "\nmde,std\n1,1\n");
  }
}
