#include <doctest.h>

#include <cmath>
#include <complex>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>

#include "tempdir.hpp"
#include "wkpnet/error.hpp"
#include "wkpnet/signalgen.hpp"

using namespace wkpnet;
using namespace wkpnet::signal;
using wkpnet::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

GeneratorConfig small_config() {
  GeneratorConfig c;
  c.grid_rows = 2;
  c.grid_cols = 2;
  c.train_per_point = 2;
  c.test_per_point = 2;
  c.window_len = 256;
  c.seed = 7;
  return c;
}

}  // namespace

TEST_SUITE("signalgen") {
  TEST_CASE("zero message gives a pure tone at the carrier offset") {
    const double fs = 5e6;
    const double f0 = 250e3;
    std::vector<double> message(2048, 0.0);
    const auto out = fm_modulate(message, 75e3, f0, fs);
    for (std::size_t n = 0; n < out.size(); ++n) {
      const auto expected = std::polar(1.0, 2 * std::numbers::pi * f0 * static_cast<double>(n) / fs);
      CHECK(std::abs(out[n] - expected) < 1e-9);
    }
  }

  TEST_CASE("constant message gives a tone at the deviation") {
    const double fs = 5e6;
    std::vector<double> message(2048, 1.0);
    const auto out = fm_modulate(message, 75e3, 0.0, fs);
    // Phase advances by 2 pi dev / fs per sample.
    const double step = 2 * std::numbers::pi * 75e3 / fs;
    for (std::size_t n = 1; n < out.size(); ++n) {
      CHECK(std::abs(std::arg(out[n] * std::conj(out[n - 1])) - step) < 1e-9);
      CHECK(std::abs(std::abs(out[n]) - 1.0) < 1e-12);
    }
  }

  TEST_CASE("sinusoidal message matches the closed-form phase and stays within carson bandwidth") {
    const double fs = 5e6;
    const double dev = 75e3;
    const std::size_t n = 4096;
    std::vector<double> message(n);
    for (std::size_t i = 0; i < n; ++i) message[i] = std::sin(2 * std::numbers::pi * 1e3 * static_cast<double>(i) / fs);
    const auto out = fm_modulate(message, dev, 0.0, fs);

    double cumsum = 0.0;
    std::vector<std::complex<double>> oracle(n);
    for (std::size_t i = 0; i < n; ++i) {
      cumsum += message[i];
      oracle[i] = std::polar(1.0, 2 * std::numbers::pi * dev * cumsum / fs);
      CHECK(std::abs(out[i] - oracle[i]) < 1e-9);
    }

    // Naive DFT: power inside +-(dev + fm) must dominate.
    const double carson = dev + 1e3;
    double inside = 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      std::complex<double> acc{};
      for (std::size_t i = 0; i < n; ++i) {
        acc += out[i] * std::polar(1.0, -2 * std::numbers::pi * static_cast<double>(k * i % n) / static_cast<double>(n));
      }
      const double f = (k < n / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n)) * fs /
                       static_cast<double>(n);
      total += std::norm(acc);
      if (std::abs(f) <= carson + fs / static_cast<double>(n)) inside += std::norm(acc);
    }
    CHECK(inside / total > 0.98);
  }

  TEST_CASE("non-finite message is rejected") {
    std::vector<double> message(16, 0.0);
    message[3] = std::numeric_limits<double>::infinity();
    try {
      fm_modulate(message, 75e3, 0.0, 5e6);
      FAIL("expected rejection");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::RejectedInput);
    }
  }

  TEST_CASE("channels are normalized, ordered and deterministic") {
    GeneratorConfig c;
    const auto points = reference_grid(c);
    REQUIRE(points.size() == 16);
    for (const auto& p : points) {
      for (int day = 1; day <= 3; ++day) {
        const ChannelModel ch = derive_channel(p, day, 99, c);
        REQUIRE(!ch.taps.empty());
        CHECK(ch.taps.front().delay == 0);
        double power = 0.0;
        for (std::size_t i = 0; i < ch.taps.size(); ++i) {
          power += std::norm(ch.taps[i].gain);
          if (i > 0) CHECK(ch.taps[i].delay > ch.taps[i - 1].delay);
        }
        CHECK(std::abs(power - 1.0) < 1e-12);
        const ChannelModel again = derive_channel(p, day, 99, c);
        REQUIRE(again.taps.size() == ch.taps.size());
        for (std::size_t i = 0; i < ch.taps.size(); ++i) {
          CHECK(again.taps[i].delay == ch.taps[i].delay);
          CHECK(again.taps[i].gain == ch.taps[i].gain);
        }
      }
    }
  }

  TEST_CASE("every pair of reference points has a distinct channel") {
    GeneratorConfig c;
    const auto points = reference_grid(c);
    std::vector<ChannelModel> channels;
    for (const auto& p : points) channels.push_back(derive_channel(p, 1, 5, c));
    for (std::size_t a = 0; a < channels.size(); ++a) {
      for (std::size_t b = a + 1; b < channels.size(); ++b) {
        bool differs = channels[a].taps.size() != channels[b].taps.size();
        for (std::size_t i = 0; !differs && i < channels[a].taps.size(); ++i) {
          differs = channels[a].taps[i].gain != channels[b].taps[i].gain;
        }
        CHECK(differs);
      }
    }
  }

  TEST_CASE("zero drift keeps later days identical, positive drift moves them") {
    GeneratorConfig c;
    const auto p = reference_grid(c)[5];
    c.channel.day_drift = 0.0;
    const auto d1 = derive_channel(p, 1, 3, c);
    const auto d2 = derive_channel(p, 2, 3, c);
    for (std::size_t i = 0; i < d1.taps.size(); ++i) CHECK(d1.taps[i].gain == d2.taps[i].gain);
    c.channel.day_drift = 0.2;
    const auto e1 = derive_channel(p, 1, 3, c);
    const auto e2 = derive_channel(p, 2, 3, c);
    double diff = 0.0;
    for (std::size_t i = 0; i < e1.taps.size(); ++i) diff += std::abs(e1.taps[i].gain - e2.taps[i].gain);
    CHECK(diff > 1e-3);
  }

  TEST_CASE("max delay must fit the window") {
    GeneratorConfig c;
    c.window_len = 8;
    c.channel.max_delay = 8;
    try {
      derive_channel(reference_grid(c)[0], 1, 1, c);
      FAIL("expected a configuration error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Configuration);
    }
  }

  TEST_CASE("identity channel without noise returns the input") {
    std::vector<Complex> s(100);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = {std::sin(0.1 * i), std::cos(0.3 * i)};
    const ChannelModel delta{{{0, {1.0, 0.0}}}, 1, 0};
    CHECK(receive(s, delta, kNoiseless, 1) == s);
  }

  TEST_CASE("impulse through a two-tap channel reproduces the taps") {
    std::vector<Complex> s(8);
    s[0] = 1.0;
    const double r = 1.0 / std::numbers::sqrt2;
    const ChannelModel ch{{{0, {r, 0.0}}, {3, {r, 0.0}}}, 1, 0};
    const auto y = receive(s, ch, kNoiseless, 1);
    const std::vector<Complex> expected{r, 0, 0, r, 0, 0, 0, 0};
    CHECK(y == expected);
  }

  TEST_CASE("measured snr matches the request within 0.2 dB") {
    const std::size_t n = 1'000'000;
    std::vector<Complex> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = std::polar(1.0, 0.01 * static_cast<double>(i));
    const ChannelModel delta{{{0, {1.0, 0.0}}}, 1, 0};
    for (double snr : {-5.0, 5.0, 12.5, 20.0}) {
      const auto y = receive(s, delta, snr, 42);
      double ps = 0.0;
      double pn = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        ps += std::norm(s[i]);
        pn += std::norm(y[i] - s[i]);
      }
      CAPTURE(snr);
      CHECK(std::abs(10.0 * std::log10(ps / pn) - snr) < 0.2);
    }
  }

  TEST_CASE("empty transmissions are rejected") {
    const ChannelModel delta{{{0, {1.0, 0.0}}}, 1, 0};
    try {
      receive({}, delta, 10.0, 1);
      FAIL("expected rejection");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::RejectedInput);
    }
  }

  TEST_CASE("reference grid ids are contiguous and coordinates distinct") {
    GeneratorConfig c;
    c.grid_rows = 3;
    c.grid_cols = 5;
    c.spacing_m = 2.0;
    const auto points = reference_grid(c);
    REQUIRE(points.size() == 15);
    std::set<std::pair<double, double>> seen;
    for (std::size_t i = 0; i < points.size(); ++i) {
      CHECK(points[i].id == static_cast<int>(i));
      seen.insert({points[i].coord.x, points[i].coord.y});
    }
    CHECK(seen.size() == 15);
    CHECK(points[14].coord == Coordinate{8.0, 4.0});
  }

  TEST_CASE("dataset layout, counts and split tags") {
    TempDir dir("gen");
    const GeneratorConfig c = small_config();
    const DatasetManifest m = generate_dataset(c, dir / "d", false);
    // 4 points x (2 train + 3 days x 2 test)
    CHECK(m.examples.size() == 32);
    CHECK(m.indices_of(Split::Train).size() == 8);
    for (Split s : {Split::TestDay1, Split::TestDay2, Split::TestDay3}) CHECK(m.indices_of(s).size() == 8);
    for (const auto& e : m.examples) {
      CHECK(e.label >= 0);
      CHECK(e.label < 4);
      if (e.split == Split::Train) CHECK(e.day == 1);
    }
    CHECK(m.window_len == 256);
    CHECK(m.config_hash == c.hash());
    const DatasetManifest back = read_manifest(dir / "d");
    CHECK(back.render() == m.render());
    CHECK(DatasetManifest::parse(m.render()).hash() == m.hash());
    const auto y = load_example(dir / "d", m, 5);
    CHECK(y.size() == 256u);
    for (const auto& v : y) CHECK((std::isfinite(v.real()) && std::isfinite(v.imag())));
  }

  TEST_CASE("generation is deterministic and independent of the job count") {
    TempDir dir("det");
    const GeneratorConfig c = small_config();
    const DatasetManifest a = generate_dataset(c, dir / "a", false, 1);
    const DatasetManifest b = generate_dataset(c, dir / "b", false, 3);
    CHECK(a.hash() == b.hash());
    for (const char* f : {"manifest.txt", "train.iq", "test-day1.iq", "test-day2.iq", "test-day3.iq"}) {
      CAPTURE(f);
      CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    }
  }

  TEST_CASE("existing datasets are not overwritten without permission") {
    TempDir dir("refuse");
    const GeneratorConfig c = small_config();
    generate_dataset(c, dir / "d", false);
    try {
      generate_dataset(c, dir / "d", false);
      FAIL("expected refusal");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Refusal);
    }
    CHECK_NOTHROW(generate_dataset(c, dir / "d", true));
  }

  TEST_CASE("later days differ from day one when drift is positive") {
    GeneratorConfig c = small_config();
    const auto p = reference_grid(c)[1];
    const auto d1 = generate_example(c, p, 1, 0);
    const auto d2 = generate_example(c, p, 2, 0);
    CHECK(d1.samples != d2.samples);
    const auto again = generate_example(c, p, 2, 0);
    CHECK(again.samples == d2.samples);
    CHECK(d2.snr_db >= c.snr_min_db);
    CHECK(d2.snr_db <= c.snr_max_db);
  }

  TEST_CASE("config hash tracks every parameter") {
    const GeneratorConfig base = small_config();
    std::vector<GeneratorConfig> variants(10, base);
    variants[0].grid_rows = 3;
    variants[1].spacing_m = 5.0;
    variants[2].train_per_point = 3;
    variants[3].snr_min_db = 4.0;
    variants[4].station_gains[2] = 0.5;
    variants[5].deviation_hz = 70e3;
    variants[6].channel.day_drift = 0.3;
    variants[7].channel.wavelength_m = 2.0;
    variants[8].seed = 8;
    variants[9].message_cutoff_hz = 10e3;
    std::set<std::uint64_t> hashes{base.hash()};
    for (const auto& v : variants) hashes.insert(v.hash());
    CHECK(hashes.size() == variants.size() + 1);
  }

  TEST_CASE("invalid generator configs are rejected") {
    GeneratorConfig c = small_config();
    c.days = 4;
    CHECK_THROWS_AS(c.validate(), Error);
    c = small_config();
    c.station_offsets_hz = {3e6, 0.0, 1e6};
    CHECK_THROWS_AS(c.validate(), Error);
    c = small_config();
    c.grid_rows = 1;
    c.grid_cols = 1;
    CHECK_THROWS_AS(c.validate(), Error);
  }
}
