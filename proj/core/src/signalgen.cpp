#include "wkpnet/signalgen.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "wkpnet/binary_io.hpp"
#include "wkpnet/error.hpp"
#include "wkpnet/fileutil.hpp"
#include "wkpnet/seeding.hpp"

namespace wkpnet::signal {

namespace {

constexpr std::uint64_t kSiteStream = 0x517e;
constexpr std::uint64_t kDriftStream = 0xd81f7;
constexpr std::uint64_t kTransmitStream = 1;
constexpr std::uint64_t kSnrStream = 2;
constexpr std::uint64_t kNoiseStream = 3;
constexpr int kMessageWarmup = 512;
constexpr int kManifestVersion = 1;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += fmt_double(values[i]);
  }
  return out;
}

void normalize_power(std::vector<Tap>& taps) {
  double power = 0.0;
  for (const auto& t : taps) power += std::norm(t.gain);
  require(power > 0.0, ErrorKind::Configuration, "channel with zero total power");
  const double scale = 1.0 / std::sqrt(power);
  for (auto& t : taps) t.gain *= scale;
}

std::vector<double> lowpass_message(std::mt19937_64& rng, int length, double cutoff_hz, double sample_rate) {
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  const double a = std::exp(-2.0 * std::numbers::pi * cutoff_hz / sample_rate);
  std::vector<double> message(length);
  double state = 0.0;
  for (int n = -kMessageWarmup; n < length; ++n) {
    state = a * state + (1.0 - a) * uniform(rng);
    if (n >= 0) message[n] = state;
  }
  double peak = 0.0;
  for (double v : message) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (double& v : message) v /= peak;
  }
  return message;
}

}  // namespace

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, value);
  return buf;
}

std::uint64_t parse_hex64(const std::string& text) {
  require(text.size() == 16 && text.find_first_not_of("0123456789abcdef") == std::string::npos, ErrorKind::Io,
          "malformed 64-bit hex value '" + text + "'");
  return std::stoull(text, nullptr, 16);
}

std::string GeneratorConfig::canonical() const {
  std::ostringstream os;
  os << "grid_rows = " << grid_rows << "\n"
     << "grid_cols = " << grid_cols << "\n"
     << "spacing_m = " << fmt_double(spacing_m) << "\n"
     << "train_per_point = " << train_per_point << "\n"
     << "test_per_point = " << test_per_point << "\n"
     << "days = " << days << "\n"
     << "window_len = " << window_len << "\n"
     << "sample_rate = " << fmt_double(sample_rate) << "\n"
     << "snr_min_db = " << fmt_double(snr_min_db) << "\n"
     << "snr_max_db = " << fmt_double(snr_max_db) << "\n"
     << "station_offsets_hz = " << join(station_offsets_hz) << "\n"
     << "station_gains = " << join(station_gains) << "\n"
     << "deviation_hz = " << fmt_double(deviation_hz) << "\n"
     << "message_cutoff_hz = " << fmt_double(message_cutoff_hz) << "\n"
     << "channel.min_taps = " << channel.min_taps << "\n"
     << "channel.max_taps = " << channel.max_taps << "\n"
     << "channel.max_delay = " << channel.max_delay << "\n"
     << "channel.delay_decay = " << fmt_double(channel.delay_decay) << "\n"
     << "channel.plane_waves = " << channel.plane_waves << "\n"
     << "channel.wavelength_m = " << fmt_double(channel.wavelength_m) << "\n"
     << "channel.day_drift = " << fmt_double(channel.day_drift) << "\n"
     << "seed = " << seed << "\n";
  return os.str();
}

std::uint64_t GeneratorConfig::hash() const { return fnv1a(canonical()); }

void GeneratorConfig::validate() const {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorKind::Configuration, what); };
  check(grid_rows >= 1 && grid_cols >= 1 && num_points() >= 2, "grid must hold at least two reference points");
  check(spacing_m > 0.0 && std::isfinite(spacing_m), "spacing_m must be positive");
  check(train_per_point >= 1 && test_per_point >= 1, "per-point example counts must be >= 1");
  check(days >= 1 && days <= 3, "days must lie in [1, 3]");
  check(window_len >= 2 && window_len % 2 == 0, "window_len must be a positive even number");
  check(sample_rate > 0.0 && std::isfinite(sample_rate), "sample_rate must be positive");
  check(std::isfinite(snr_min_db) && std::isfinite(snr_max_db) && snr_min_db <= snr_max_db, "invalid SNR range");
  check(!station_offsets_hz.empty() && station_offsets_hz.size() == station_gains.size(),
        "station offsets and gains must be non-empty and equally long");
  for (double f : station_offsets_hz) check(std::abs(f) < sample_rate / 2.0, "station offset beyond Nyquist");
  for (double g : station_gains) check(g > 0.0 && std::isfinite(g), "station gains must be positive");
  check(deviation_hz > 0.0, "deviation_hz must be positive");
  check(message_cutoff_hz > 0.0 && message_cutoff_hz < sample_rate / 2.0, "message cutoff out of range");
  check(channel.min_taps >= 1 && channel.min_taps <= channel.max_taps, "invalid channel tap count range");
  check(channel.max_delay >= channel.max_taps - 1 && channel.max_delay >= 0,
        "channel.max_delay too small for the tap count");
  check(channel.max_delay < window_len, "channel.max_delay must be shorter than window_len");
  check(channel.delay_decay > 0.0 && channel.plane_waves >= 1 && channel.wavelength_m > 0.0,
        "channel field parameters must be positive");
  check(channel.day_drift >= 0.0 && std::isfinite(channel.day_drift), "channel.day_drift must be >= 0");
}

std::vector<ReferencePoint> reference_grid(const GeneratorConfig& config) {
  std::vector<ReferencePoint> points;
  for (int r = 0; r < config.grid_rows; ++r) {
    for (int c = 0; c < config.grid_cols; ++c) {
      points.push_back({r * config.grid_cols + c, {c * config.spacing_m, r * config.spacing_m}});
    }
  }
  return points;
}

std::vector<Complex> fm_modulate(std::span<const double> message, double deviation_hz, double carrier_offset_hz,
                                 double sample_rate, double initial_phase) {
  require(sample_rate > 0.0, ErrorKind::Parameter, "sample rate must be positive");
  require(deviation_hz > 0.0, ErrorKind::Parameter, "deviation must be positive");
  require(std::abs(carrier_offset_hz) < sample_rate / 2.0, ErrorKind::Parameter, "carrier offset beyond Nyquist");
  for (double m : message) {
    require(std::isfinite(m), ErrorKind::RejectedInput, "non-finite message sample");
    require(m >= -1.0 && m <= 1.0, ErrorKind::RejectedInput, "message sample outside [-1, 1]");
  }
  std::vector<Complex> out(message.size());
  const double two_pi = 2.0 * std::numbers::pi;
  double integral = 0.0;
  for (std::size_t n = 0; n < message.size(); ++n) {
    integral += message[n];
    // Carrier cycles are reduced modulo 1 before scaling to keep the phase exact for long records.
    const double cycles = std::fmod(carrier_offset_hz * static_cast<double>(n) / sample_rate, 1.0);
    const double phase = initial_phase + two_pi * cycles + two_pi * deviation_hz * integral / sample_rate;
    out[n] = std::polar(1.0, phase);
  }
  return out;
}

ChannelModel derive_channel(const ReferencePoint& point, int day, std::uint64_t seed, const GeneratorConfig& config) {
  const ChannelParams& p = config.channel;
  require(day >= 1, ErrorKind::Configuration, "day must be >= 1");
  require(p.max_delay < config.window_len, ErrorKind::Configuration, "channel.max_delay must be shorter than window_len");
  require(p.min_taps >= 1 && p.min_taps <= p.max_taps && p.max_delay >= p.max_taps - 1, ErrorKind::Configuration,
          "invalid channel tap configuration");

  std::mt19937_64 site(derive_seed({seed, kSiteStream}));
  const int tap_count = std::uniform_int_distribution<int>(p.min_taps, p.max_taps)(site);
  std::vector<int> candidates(p.max_delay);
  std::iota(candidates.begin(), candidates.end(), 1);
  std::shuffle(candidates.begin(), candidates.end(), site);
  std::vector<int> delays{0};
  delays.insert(delays.end(), candidates.begin(), candidates.begin() + (tap_count - 1));
  std::sort(delays.begin(), delays.end());

  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  const double k_wave = 2.0 * std::numbers::pi / p.wavelength_m;
  ChannelModel channel{{}, day, seed};
  for (int delay : delays) {
    const double profile = std::exp(-0.5 * delay / p.delay_decay);
    Complex gain{};
    for (int w = 0; w < p.plane_waves; ++w) {
      const Complex amplitude(normal(site), normal(site));
      const double theta = angle(site);
      const double phase = k_wave * (point.coord.x * std::cos(theta) + point.coord.y * std::sin(theta));
      gain += amplitude * std::polar(1.0, phase);
    }
    channel.taps.push_back({delay, profile * gain / std::sqrt(2.0 * p.plane_waves)});
  }
  normalize_power(channel.taps);

  if (day > 1 && p.day_drift > 0.0) {
    std::mt19937_64 drift(derive_seed({seed, kDriftStream, static_cast<std::uint64_t>(point.id),
                                       static_cast<std::uint64_t>(day)}));
    std::normal_distribution<double> perturb(0.0, p.day_drift * (day - 1));
    for (auto& tap : channel.taps) {
      const double re = perturb(drift);
      const double im = perturb(drift);
      tap.gain += Complex(re, im);
    }
    normalize_power(channel.taps);
  }
  return channel;
}

std::vector<Complex> receive(std::span<const Complex> s, const ChannelModel& channel, double snr_db,
                             std::uint64_t noise_seed) {
  require(!s.empty(), ErrorKind::RejectedInput, "empty transmitted signal");
  require(!std::isnan(snr_db) && snr_db != -std::numeric_limits<double>::infinity(), ErrorKind::RejectedInput,
          "snr_db must be finite or +inf");
  for (const auto& v : s) {
    require(std::isfinite(v.real()) && std::isfinite(v.imag()), ErrorKind::RejectedInput, "non-finite signal sample");
  }
  require(!channel.taps.empty(), ErrorKind::RejectedInput, "channel without taps");

  std::vector<Complex> y(s.size());
  for (const auto& tap : channel.taps) {
    const auto d = static_cast<std::size_t>(tap.delay);
    for (std::size_t n = d; n < s.size(); ++n) y[n] += tap.gain * s[n - d];
  }
  if (std::isinf(snr_db)) return y;

  double power = 0.0;
  for (const auto& v : y) power += std::norm(v);
  power /= static_cast<double>(y.size());
  const double sigma = std::sqrt(power / (2.0 * std::pow(10.0, snr_db / 10.0)));
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& v : y) {
    const double re = noise(rng);
    const double im = noise(rng);
    v += sigma * Complex(re, im);
  }
  return y;
}

std::vector<Complex> synthesize_transmission(const GeneratorConfig& config, std::uint64_t example_seed) {
  std::mt19937_64 rng(example_seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<Complex> s(config.window_len);
  for (std::size_t st = 0; st < config.station_offsets_hz.size(); ++st) {
    const auto message = lowpass_message(rng, config.window_len, config.message_cutoff_hz, config.sample_rate);
    const auto fm = fm_modulate(message, config.deviation_hz, config.station_offsets_hz[st], config.sample_rate, phase(rng));
    for (int n = 0; n < config.window_len; ++n) s[n] += config.station_gains[st] * fm[n];
  }
  return s;
}

IqRecording generate_example(const GeneratorConfig& config, const ReferencePoint& point, int day, int index) {
  const std::uint64_t example_seed = derive_seed(
      {config.seed, static_cast<std::uint64_t>(point.id), static_cast<std::uint64_t>(day), static_cast<std::uint64_t>(index)});
  const auto s = synthesize_transmission(config, derive_seed({example_seed, kTransmitStream}));
  std::mt19937_64 snr_rng(derive_seed({example_seed, kSnrStream}));
  const double snr_db = std::uniform_real_distribution<double>(config.snr_min_db, config.snr_max_db)(snr_rng);
  const ChannelModel channel = derive_channel(point, day, config.seed, config);
  return IqRecording{receive(s, channel, snr_db, derive_seed({example_seed, kNoiseStream})), config.sample_rate,
                     point.id, day, snr_db};
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::TestDay1: return "test-day1";
    case Split::TestDay2: return "test-day2";
    case Split::TestDay3: return "test-day3";
  }
  return "?";
}

Split parse_split(const std::string& text) {
  for (Split s : {Split::Train, Split::TestDay1, Split::TestDay2, Split::TestDay3}) {
    if (to_string(s) == text) return s;
  }
  fail(ErrorKind::Io, "unknown split tag '" + text + "'");
}

Split test_split_for_day(int day) {
  require(day >= 1 && day <= 3, ErrorKind::Parameter, "test days are 1..3");
  return day == 1 ? Split::TestDay1 : (day == 2 ? Split::TestDay2 : Split::TestDay3);
}

std::vector<std::size_t> DatasetManifest::indices_of(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].split == split) out.push_back(i);
  }
  return out;
}

std::string DatasetManifest::render() const {
  std::ostringstream os;
  os << "# wkpnet dataset manifest\n"
     << "format_version = " << kManifestVersion << "\n"
     << "config_hash = " << hex64(config_hash) << "\n"
     << "sample_rate = " << fmt_double(sample_rate) << "\n"
     << "window_len = " << window_len << "\n"
     << "[generator]\n"
     << generator_config << "[points] " << points.size() << "\n";
  for (const auto& p : points) os << p.id << " " << fmt_double(p.coord.x) << " " << fmt_double(p.coord.y) << "\n";
  os << "[examples] " << examples.size() << "\n";
  for (const auto& e : examples) {
    os << e.file << " " << e.offset << " " << e.label << " " << e.day << " " << to_string(e.split) << "\n";
  }
  return os.str();
}

DatasetManifest DatasetManifest::parse(const std::string& text) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  auto next_line = [&](const char* what) {
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::Io, std::string("manifest truncated at ") + what);
  };
  auto value_of = [&](const std::string& key) {
    next_line(key.c_str());
    const std::string prefix = key + " = ";
    require(line.rfind(prefix, 0) == 0, ErrorKind::Io, "manifest: expected '" + key + "', got '" + line + "'");
    return line.substr(prefix.size());
  };
  next_line("header");
  require(line == "# wkpnet dataset manifest", ErrorKind::Io, "not a wkpnet manifest");
  require(std::stoi(value_of("format_version")) == kManifestVersion, ErrorKind::Io, "unsupported manifest version");
  m.config_hash = parse_hex64(value_of("config_hash"));
  m.sample_rate = std::stod(value_of("sample_rate"));
  m.window_len = std::stoi(value_of("window_len"));
  next_line("[generator]");
  require(line == "[generator]", ErrorKind::Io, "manifest: missing [generator] section");
  while (true) {
    next_line("[points]");
    if (line.rfind("[points] ", 0) == 0) break;
    m.generator_config += line + "\n";
  }
  const std::size_t point_count = std::stoul(line.substr(9));
  for (std::size_t i = 0; i < point_count; ++i) {
    next_line("point table");
    std::istringstream row(line);
    ReferencePoint p;
    require(static_cast<bool>(row >> p.id >> p.coord.x >> p.coord.y), ErrorKind::Io, "manifest: bad point row");
    require(p.id == static_cast<int>(i), ErrorKind::Io, "manifest: point ids must be contiguous");
    m.points.push_back(p);
  }
  next_line("[examples]");
  require(line.rfind("[examples] ", 0) == 0, ErrorKind::Io, "manifest: missing [examples] section");
  const std::size_t example_count = std::stoul(line.substr(11));
  for (std::size_t i = 0; i < example_count; ++i) {
    next_line("example table");
    std::istringstream row(line);
    ExampleEntry e;
    std::string split;
    require(static_cast<bool>(row >> e.file >> e.offset >> e.label >> e.day >> split), ErrorKind::Io,
            "manifest: bad example row");
    e.split = parse_split(split);
    require(e.label >= 0 && e.label < static_cast<int>(m.points.size()), ErrorKind::Io,
            "manifest: example label without a reference point");
    m.examples.push_back(std::move(e));
  }
  return m;
}

std::uint64_t DatasetManifest::hash() const { return fnv1a(render()); }

DatasetManifest generate_dataset(const GeneratorConfig& config, const std::filesystem::path& out_dir, bool overwrite,
                                 int jobs) {
  namespace fs = std::filesystem;
  config.validate();
  if (fs::exists(out_dir / kManifestFile) && !overwrite) {
    fail(ErrorKind::Refusal, "dataset already exists at " + out_dir.string() + " (pass --overwrite to replace it)");
  }
  fs::create_directories(out_dir);

  DatasetManifest manifest;
  manifest.points = reference_grid(config);
  manifest.window_len = config.window_len;
  manifest.sample_rate = config.sample_rate;
  manifest.config_hash = config.hash();
  manifest.generator_config = config.canonical();

  struct Job {
    int point;
    int day;
    int index;
  };
  const std::uint64_t bytes_per_example = static_cast<std::uint64_t>(config.window_len) * 2 * sizeof(float);
  std::vector<std::pair<Split, std::vector<Job>>> files;
  for (Split split : {Split::Train, Split::TestDay1, Split::TestDay2, Split::TestDay3}) {
    const int day = split == Split::Train ? 1 : static_cast<int>(split);
    if (day > config.days) continue;
    std::vector<Job> jobs_for_split;
    for (const auto& p : manifest.points) {
      const int count = split == Split::Train ? config.train_per_point : config.test_per_point;
      const int first = split == Split::TestDay1 ? config.train_per_point : 0;
      for (int i = 0; i < count; ++i) jobs_for_split.push_back({p.id, day, first + i});
    }
    files.emplace_back(split, std::move(jobs_for_split));
  }

  constexpr std::size_t kChunk = 64;
  for (const auto& [split, work] : files) {
    const std::string file = to_string(split) + ".iq";
    for (std::size_t i = 0; i < work.size(); ++i) {
      manifest.examples.push_back({file, i * bytes_per_example, work[i].point, work[i].day, split});
    }
    write_file_atomic(out_dir / file, [&, &work = work](std::ostream& out) {
      std::vector<float> buffer;
      for (std::size_t start = 0; start < work.size(); start += kChunk) {
        const std::size_t n = std::min(kChunk, work.size() - start);
        buffer.assign(n * config.window_len * 2, 0.0f);
        parallel_for(n, jobs, [&](std::size_t k) {
          const Job& job = work[start + k];
          const auto rec = generate_example(config, manifest.points[job.point], job.day, job.index);
          float* dst = buffer.data() + k * config.window_len * 2;
          for (int t = 0; t < config.window_len; ++t) {
            dst[2 * t] = static_cast<float>(rec.samples[t].real());
            dst[2 * t + 1] = static_cast<float>(rec.samples[t].imag());
          }
        });
        binary::write_f32s(out, buffer);
      }
    });
  }
  const std::string text = manifest.render();
  write_file_atomic(out_dir / kManifestFile, [&](std::ostream& out) { out << text; });
  return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& dataset_dir) {
  return DatasetManifest::parse(read_text_file(dataset_dir / kManifestFile));
}

std::vector<Complex> load_example(const std::filesystem::path& dataset_dir, const DatasetManifest& manifest,
                                  std::size_t index) {
  require(index < manifest.examples.size(), ErrorKind::Parameter, "example index out of range");
  const ExampleEntry& e = manifest.examples[index];
  std::ifstream in(dataset_dir / e.file, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + (dataset_dir / e.file).string());
  in.seekg(static_cast<std::streamoff>(e.offset));
  std::vector<float> raw(static_cast<std::size_t>(manifest.window_len) * 2);
  binary::read_f32s(in, raw);
  std::vector<Complex> out(manifest.window_len);
  for (int t = 0; t < manifest.window_len; ++t) out[t] = {raw[2 * t], raw[2 * t + 1]};
  return out;
}

}  // namespace wkpnet::signal
