#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <sstream>

#include "wkpnet/error.hpp"
#include "wkpnet/wavelet.hpp"

using namespace wkpnet;
using namespace wkpnet::wavelet;

namespace {

std::vector<double> gaussian(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> x(n);
  for (double& v : x) v = d(rng);
  return x;
}

// Scalar reference for one split: out[m] = sum_k h[k] x[(2m + k) mod n].
std::vector<double> correlate_decimate(const std::vector<double>& x, const std::vector<double>& h) {
  const std::size_t n = x.size();
  std::vector<double> out(n / 2, 0.0);
  for (std::size_t m = 0; m < n / 2; ++m) {
    for (std::size_t k = 0; k < h.size(); ++k) out[m] += h[k] * x[(2 * m + k) % n];
  }
  return out;
}

double energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

bool is_orthogonal(const WaveletFamily& f) {
  return f.kind != FamilyKind::Biorthogonal && f.kind != FamilyKind::ReverseBior;
}

}  // namespace

TEST_SUITE("wavelet") {
  TEST_CASE("haar bank is the unique two-tap orthonormal pair") {
    const auto& bank = build_filter_bank(WaveletFamily::parse("haar"));
    const double r = 1.0 / std::numbers::sqrt2;
    REQUIRE(bank.h0.size() == 2);
    CHECK(bank.h0[0] == doctest::Approx(r).epsilon(1e-15));
    CHECK(bank.h0[1] == doctest::Approx(r).epsilon(1e-15));
    CHECK(bank.h1[0] == doctest::Approx(r).epsilon(1e-15));
    CHECK(bank.h1[1] == doctest::Approx(-r).epsilon(1e-15));
    CHECK(bank.orthogonal);
  }

  TEST_CASE("bior1.1 degenerates to haar") {
    const auto& haar = build_filter_bank(WaveletFamily::parse("haar"));
    const auto& b11 = build_filter_bank(WaveletFamily::parse("bior1.1"));
    REQUIRE(b11.h0.size() == haar.h0.size());
    for (std::size_t k = 0; k < haar.h0.size(); ++k) {
      CHECK(std::abs(b11.h0[k] - haar.h0[k]) < 1e-12);
      CHECK(std::abs(b11.h1[k] - haar.h1[k]) < 1e-12);
      CHECK(std::abs(b11.g0[k] - haar.g0[k]) < 1e-12);
    }
  }

  TEST_CASE("db2 has four taps summing to sqrt2 with double-shift orthonormality") {
    const auto& bank = build_filter_bank(WaveletFamily::parse("db2"));
    REQUIRE(bank.h0.size() == 4);
    double sum = 0.0;
    for (double v : bank.h0) sum += v;
    CHECK(std::abs(sum - std::numbers::sqrt2) < 1e-12);
    for (int m = 0; m <= 1; ++m) {
      double acc = 0.0;
      for (std::size_t k = 0; k + 2 * m < 4; ++k) acc += bank.h0[k] * bank.h0[k + 2 * m];
      CHECK(std::abs(acc - (m == 0 ? 1.0 : 0.0)) < 1e-10);
    }
  }

  TEST_CASE("every embedded family passes the structural invariants") {
    for (const auto& family : supported_families()) {
      CAPTURE(family.name());
      const auto& bank = build_filter_bank(family);
      const auto r = filter_bank_residuals(bank);
      CHECK(r.highpass_sum < 1e-12);
      CHECK(r.shift_orthogonality < 1e-10);
      CHECK(r.quadrature_mirror < 1e-10);
      if (is_orthogonal(family)) {
        CHECK(r.lowpass_sum < 1e-12);
        // h1[k] = (-1)^k h0[L-1-k]
        const std::size_t len = bank.h0.size();
        for (std::size_t k = 0; k < len; ++k) {
          const double expected = (k % 2 == 0 ? 1.0 : -1.0) * bank.h0[len - 1 - k];
          CHECK(std::abs(bank.h1[k] - expected) < 1e-15);
        }
      } else {
        CHECK(r.lowpass_sum < 1e-10);
      }
      CHECK(WaveletFamily::parse(family.name()) == family);
    }
  }

  TEST_CASE("unknown families are rejected") {
    for (const char* name : {"db0", "db11", "sym1", "coif6", "bior4.4", "rbio2.3", "mexh", "db2x", ""}) {
      CAPTURE(name);
      try {
        build_filter_bank(WaveletFamily::parse(name));
        FAIL("expected an error");
      } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::UnsupportedFamily);
      }
    }
  }

  TEST_CASE("constant input has no detail") {
    const auto& bank = build_filter_bank(WaveletFamily::parse("haar"));
    const std::vector<double> x{1, 1, 1, 1};
    const WpdTree tree = wpd_analyze(x, bank, 1);
    REQUIRE(tree.nodes.size() == 2);
    CHECK(tree.nodes[0][0] == doctest::Approx(std::numbers::sqrt2));
    CHECK(tree.nodes[0][1] == doctest::Approx(std::numbers::sqrt2));
    CHECK(tree.nodes[1][0] == 0.0);
    CHECK(tree.nodes[1][1] == 0.0);
  }

  TEST_CASE("haar split of 1 2 3 4 matches the scalar oracle") {
    const auto& bank = build_filter_bank(WaveletFamily::parse("haar"));
    const std::vector<double> x{1, 2, 3, 4};
    const auto low = correlate_decimate(x, {1 / std::numbers::sqrt2, 1 / std::numbers::sqrt2});
    const auto high = correlate_decimate(x, {1 / std::numbers::sqrt2, -1 / std::numbers::sqrt2});
    // Hand values: low = [3, 7] / sqrt2, high = [-1, -1] / sqrt2.
    CHECK(std::abs(low[0] - 3 / std::numbers::sqrt2) < 1e-15);
    CHECK(std::abs(low[1] - 7 / std::numbers::sqrt2) < 1e-15);
    CHECK(std::abs(high[0] + 1 / std::numbers::sqrt2) < 1e-15);
    CHECK(std::abs(high[1] + 1 / std::numbers::sqrt2) < 1e-15);

    const WpdTree tree = wpd_analyze(x, bank, 1);
    for (int m = 0; m < 2; ++m) {
      CHECK(std::abs(tree.nodes[0][m] - low[m]) < 1e-14);
      CHECK(std::abs(tree.nodes[1][m] - high[m]) < 1e-14);
    }
  }

  TEST_CASE("fast split agrees with the scalar oracle for every family") {
    const auto x = gaussian(64, 11);
    for (const auto& family : supported_families()) {
      CAPTURE(family.name());
      const auto& bank = build_filter_bank(family);
      std::vector<double> low(32), high(32);
      analysis_step(x, bank, low, high);
      const auto lo = correlate_decimate(x, bank.h0);
      const auto hi = correlate_decimate(x, bank.h1);
      for (int m = 0; m < 32; ++m) {
        CHECK(std::abs(low[m] - lo[m]) < 1e-12);
        CHECK(std::abs(high[m] - hi[m]) < 1e-12);
      }
    }
  }

  TEST_CASE("parseval holds for orthonormal banks up to level 7") {
    const auto x = gaussian(4096, 3);
    const double e0 = energy(x);
    for (const auto& family : supported_families()) {
      if (!is_orthogonal(family)) continue;
      const auto& bank = build_filter_bank(family);
      for (int level = 1; level <= 7; ++level) {
        CAPTURE(family.name());
        CAPTURE(level);
        const WpdTree tree = wpd_analyze(x, bank, level);
        REQUIRE(tree.nodes.size() == (std::size_t{1} << level));
        double e = 0.0;
        for (const auto& node : tree.nodes) {
          CHECK(node.size() == 4096u >> level);
          e += energy(node);
        }
        CHECK(std::abs(e - e0) / e0 < 1e-9);
      }
    }
  }

  TEST_CASE("round trips reconstruct the input") {
    const auto x = gaussian(4096, 5);
    for (const auto& family : supported_families()) {
      const auto& bank = build_filter_bank(family);
      for (int level = 1; level <= 5; ++level) {
        CAPTURE(family.name());
        CAPTURE(level);
        const auto back = wpd_synthesize(wpd_analyze(x, bank, level), bank);
        REQUIRE(back.size() == x.size());
        double worst = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(back[i] - x[i]));
        CHECK(worst < 1e-9);
      }
    }
  }

  TEST_CASE("multi-level analysis equals repeated single splits") {
    const auto x = gaussian(256, 8);
    for (const char* name : {"haar", "db4", "sym5", "coif2", "bior2.2"}) {
      CAPTURE(name);
      const auto& bank = build_filter_bank(WaveletFamily::parse(name));
      std::vector<std::vector<double>> nodes{x};
      for (int level = 1; level <= 4; ++level) {
        std::vector<std::vector<double>> next;
        for (const auto& node : nodes) {
          next.push_back(correlate_decimate(node, bank.h0));
          next.push_back(correlate_decimate(node, bank.h1));
        }
        nodes = std::move(next);
        const WpdTree tree = wpd_analyze(x, bank, level);
        REQUIRE(tree.nodes.size() == nodes.size());
        for (std::size_t j = 0; j < nodes.size(); ++j) {
          for (std::size_t t = 0; t < nodes[j].size(); ++t) CHECK(std::abs(tree.nodes[j][t] - nodes[j][t]) < 1e-12);
        }
      }
    }
  }

  TEST_CASE("analysis is linear") {
    const auto x = gaussian(512, 1);
    const auto z = gaussian(512, 2);
    const double a = 1.7;
    const double b = -0.3;
    std::vector<double> mix(512);
    for (std::size_t i = 0; i < 512; ++i) mix[i] = a * x[i] + b * z[i];
    for (const char* name : {"haar", "db6", "rbio3.5"}) {
      const auto& bank = build_filter_bank(WaveletFamily::parse(name));
      const auto tx = wpd_analyze(x, bank, 4);
      const auto tz = wpd_analyze(z, bank, 4);
      const auto tm = wpd_analyze(mix, bank, 4);
      for (std::size_t j = 0; j < tm.nodes.size(); ++j) {
        for (std::size_t t = 0; t < tm.nodes[j].size(); ++t) {
          CHECK(std::abs(tm.nodes[j][t] - (a * tx.nodes[j][t] + b * tz.nodes[j][t])) < 1e-10);
        }
      }
    }
  }

  TEST_CASE("haar: shifting the input by two shifts both nodes by one") {
    const auto x = gaussian(64, 4);
    std::vector<double> shifted(64);
    for (std::size_t i = 0; i < 64; ++i) shifted[(i + 2) % 64] = x[i];
    const auto& bank = build_filter_bank(WaveletFamily::parse("haar"));
    const auto t0 = wpd_analyze(x, bank, 1);
    const auto t1 = wpd_analyze(shifted, bank, 1);
    for (int j = 0; j < 2; ++j) {
      for (std::size_t m = 0; m < 32; ++m) CHECK(t1.nodes[j][(m + 1) % 32] == doctest::Approx(t0.nodes[j][m]));
    }
  }

  TEST_CASE("frequency order places a band-centred tone in its own band") {
    const auto& bank = build_filter_bank(WaveletFamily::parse("db10"));
    const int level = 3;
    const int bands = 1 << level;
    for (int band = 0; band < bands; ++band) {
      CAPTURE(band);
      // Band j covers [j, j+1) * (fs/2) / bands.
      const double f = (band + 0.5) * 0.5 / bands;
      std::vector<double> x(4096);
      for (std::size_t n = 0; n < x.size(); ++n) x[n] = std::cos(2 * std::numbers::pi * f * static_cast<double>(n));
      const WpdTree tree = reorder(wpd_analyze(x, bank, level), NodeOrder::Frequency);
      std::size_t best = 0;
      for (std::size_t j = 1; j < tree.nodes.size(); ++j) {
        if (energy(tree.nodes[j]) > energy(tree.nodes[best])) best = j;
      }
      CHECK(best == static_cast<std::size_t>(band));
    }
  }

  TEST_CASE("reorder round trips and follows the gray code") {
    const auto x = gaussian(256, 9);
    const auto& bank = build_filter_bank(WaveletFamily::parse("sym4"));
    const WpdTree natural = wpd_analyze(x, bank, 4);
    const WpdTree freq = reorder(natural, NodeOrder::Frequency);
    CHECK(freq.ordering == NodeOrder::Frequency);
    for (std::size_t p = 0; p < freq.nodes.size(); ++p) CHECK(freq.nodes[p] == natural.nodes[gray_code(p)]);
    const WpdTree back = reorder(freq, NodeOrder::Natural);
    for (std::size_t j = 0; j < natural.nodes.size(); ++j) CHECK(back.nodes[j] == natural.nodes[j]);
  }

  TEST_CASE("analysis rejects bad input") {
    const auto& bank = build_filter_bank(WaveletFamily::parse("haar"));
    std::vector<double> x(100, 1.0);
    CHECK_THROWS_AS(wpd_analyze(x, bank, 3), Error);
    try {
      wpd_analyze(x, bank, 3);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Shape);
    }
    std::vector<double> y(64, 1.0);
    y[5] = std::nan("");
    try {
      wpd_analyze(y, bank, 2);
      FAIL("expected rejection");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::RejectedInput);
    }
  }

  TEST_CASE("featurize_wpd layout and I/Q planes") {
    const auto& bank = build_filter_bank(WaveletFamily::parse("haar"));
    const auto re = gaussian(4096, 21);
    std::vector<std::complex<double>> real_only(4096), imag_only(4096);
    for (std::size_t i = 0; i < 4096; ++i) {
      real_only[i] = {re[i], 0.0};
      imag_only[i] = {0.0, re[i]};
    }
    const FeatureTensor a = featurize_wpd(real_only, bank, 5);
    CHECK(a.planes == 2);
    CHECK(a.height == 128);
    CHECK(a.width == 32);
    const FeatureTensor b = featurize_wpd(imag_only, bank, 5);
    const WpdTree tree = reorder(wpd_analyze(re, bank, 5), NodeOrder::Frequency);
    for (int t = 0; t < 128; ++t) {
      for (int j = 0; j < 32; ++j) {
        CHECK(a.at(1, t, j) == 0.0f);
        CHECK(b.at(0, t, j) == 0.0f);
        CHECK(a.at(0, t, j) == static_cast<float>(tree.nodes[j][t]));
        CHECK(b.at(1, t, j) == a.at(0, t, j));
      }
    }
    const FeatureTensor nat = featurize_wpd(real_only, bank, 5, NodeOrder::Natural);
    CHECK(nat.at(0, 7, 3) == static_cast<float>(wpd_analyze(re, bank, 5).nodes[3][7]));
  }

  TEST_CASE("stft frame count and layout") {
    // Direct enumeration of frame starts.
    int frames = 0;
    for (int start = 0; start + 512 <= 4096; start += 128) ++frames;
    CHECK(frames == 29);
    CHECK(stft_frame_count(4096) == 29);
    CHECK(stft_frame_count(512) == 1);
    CHECK(stft_frame_count(639) == 1);
    CHECK(stft_frame_count(640) == 2);

    std::vector<std::complex<double>> zero(4096);
    const FeatureTensor z = featurize_stft(zero);
    CHECK(z.height == 29);
    CHECK(z.width == 512);
    for (float v : z.values) CHECK(v == 0.0f);

    std::vector<std::complex<double>> shorty(300);
    try {
      featurize_stft(shorty);
      FAIL("expected a shape error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Shape);
    }
  }

  TEST_CASE("stft of a bin-centred tone peaks at that bin") {
    for (int k : {0, 3, 100, 255, 300, 511}) {
      CAPTURE(k);
      std::vector<std::complex<double>> y(4096);
      for (std::size_t n = 0; n < y.size(); ++n) {
        y[n] = std::polar(1.0, 2 * std::numbers::pi * k * static_cast<double>(n) / 512.0);
      }
      const FeatureTensor f = featurize_stft(y);
      for (int frame = 0; frame < f.height; ++frame) {
        int best = 0;
        double best_mag = -1.0;
        for (int bin = 0; bin < f.width; ++bin) {
          const double mag = std::hypot(f.at(0, frame, bin), f.at(1, frame, bin));
          if (mag > best_mag) {
            best_mag = mag;
            best = bin;
          }
        }
        CHECK(best == k);
      }
    }
  }

  TEST_CASE("feature tensors serialize losslessly") {
    const auto& bank = build_filter_bank(WaveletFamily::parse("db3"));
    const auto re = gaussian(1024, 2);
    const auto im = gaussian(1024, 3);
    std::vector<std::complex<double>> y(1024);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = {re[i], im[i]};
    const FeatureTensor f = featurize_wpd(y, bank, 3);
    std::stringstream buffer;
    write_feature_tensor(buffer, f);
    CHECK(buffer.str().size() == 16 + f.values.size() * 4);
    CHECK(buffer.str().substr(0, 4) == "WKFT");
    const FeatureTensor g = read_feature_tensor(buffer);
    CHECK(g.planes == f.planes);
    CHECK(g.height == f.height);
    CHECK(g.width == f.width);
    CHECK(g.values == f.values);
  }
}
