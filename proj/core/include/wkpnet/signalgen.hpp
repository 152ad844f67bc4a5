#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace wkpnet::signal {

using Complex = std::complex<double>;

struct Coordinate {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Coordinate&) const = default;
};

struct ReferencePoint {
  int id = 0;
  Coordinate coord;
};

struct Tap {
  int delay = 0;
  Complex gain;
};

struct ChannelModel {
  std::vector<Tap> taps;
  int day = 1;
  std::uint64_t seed = 0;
};

/// Multipath field parameters. Tap delays and the plane-wave field are shared by
/// the whole site (a function of the seed); gains vary smoothly with position.
struct ChannelParams {
  int min_taps = 3;
  int max_taps = 6;
  int max_delay = 12;
  double delay_decay = 4.0;
  int plane_waves = 6;
  double wavelength_m = 3.0;
  double day_drift = 0.15;
};

struct GeneratorConfig {
  int grid_rows = 4;
  int grid_cols = 4;
  double spacing_m = 1.0;
  int train_per_point = 200;
  int test_per_point = 50;
  int days = 3;
  int window_len = 4096;
  double sample_rate = 5.0e6;
  double snr_min_db = 5.0;
  double snr_max_db = 20.0;
  std::vector<double> station_offsets_hz{-1.2e6, 0.0, 1.2e6};
  std::vector<double> station_gains{1.0, 0.8, 0.6};
  double deviation_hz = 75.0e3;
  double message_cutoff_hz = 15.0e3;
  ChannelParams channel;
  std::uint64_t seed = 1;

  int num_points() const { return grid_rows * grid_cols; }
  /// Stable "key = value" rendering of every parameter, one per line.
  std::string canonical() const;
  std::uint64_t hash() const;
  void validate() const;
};

std::vector<ReferencePoint> reference_grid(const GeneratorConfig& config);

/// Unit-modulus FM baseband: phase(n) = 2 pi (carrier_offset n + deviation cumsum(message)[n]) / sample_rate.
std::vector<Complex> fm_modulate(std::span<const double> message, double deviation_hz, double carrier_offset_hz,
                                 double sample_rate, double initial_phase = 0.0);

ChannelModel derive_channel(const ReferencePoint& point, int day, std::uint64_t seed, const GeneratorConfig& config);

inline constexpr double kNoiseless = std::numeric_limits<double>::infinity();

/// s convolved with the channel taps (truncated to len(s)) plus complex AWGN at the
/// requested measured SNR. snr_db = kNoiseless disables noise.
std::vector<Complex> receive(std::span<const Complex> s, const ChannelModel& channel, double snr_db,
                             std::uint64_t noise_seed);

/// Transmitted composite of all configured stations for one example.
std::vector<Complex> synthesize_transmission(const GeneratorConfig& config, std::uint64_t example_seed);

struct IqRecording {
  std::vector<Complex> samples;
  double sample_rate = 0.0;
  int label = 0;
  int day = 1;
  double snr_db = 0.0;
};

/// One example, a pure function of (config, point, day, index).
IqRecording generate_example(const GeneratorConfig& config, const ReferencePoint& point, int day, int index);

enum class Split { Train, TestDay1, TestDay2, TestDay3 };

std::string to_string(Split split);
Split parse_split(const std::string& text);
Split test_split_for_day(int day);

struct ExampleEntry {
  std::string file;
  std::uint64_t offset = 0;
  int label = 0;
  int day = 1;
  Split split = Split::Train;
};

struct DatasetManifest {
  std::vector<ReferencePoint> points;
  std::vector<ExampleEntry> examples;
  int window_len = 0;
  double sample_rate = 0.0;
  std::uint64_t config_hash = 0;
  std::string generator_config;

  std::vector<std::size_t> indices_of(Split split) const;
  std::string render() const;
  static DatasetManifest parse(const std::string& text);
  /// Content hash of the rendered manifest.
  std::uint64_t hash() const;
};

inline constexpr const char* kManifestFile = "manifest.txt";

/// Writes one IQ file per split plus manifest.txt under out_dir. Refuses to touch an
/// existing dataset unless overwrite is set.
DatasetManifest generate_dataset(const GeneratorConfig& config, const std::filesystem::path& out_dir, bool overwrite,
                                 int jobs = 1);

DatasetManifest read_manifest(const std::filesystem::path& dataset_dir);

/// Reads one example window from its IQ file (float32 I,Q pairs, little-endian).
std::vector<Complex> load_example(const std::filesystem::path& dataset_dir, const DatasetManifest& manifest,
                                  std::size_t index);

std::string hex64(std::uint64_t value);
std::uint64_t parse_hex64(const std::string& text);

}  // namespace wkpnet::signal
