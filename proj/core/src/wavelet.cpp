#include "wkpnet/wavelet.hpp"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>

#include "wavelet_tables.hpp"
#include "wkpnet/binary_io.hpp"
#include "wkpnet/error.hpp"

namespace wkpnet::wavelet {

namespace {

constexpr double kLowpassSumTolerance = 1e-12;
constexpr double kShiftTolerance = 1e-10;

bool is_biorthogonal(FamilyKind kind) {
  return kind == FamilyKind::Biorthogonal || kind == FamilyKind::ReverseBior;
}

std::vector<double> alternate_flip(std::span<const double> h) {
  const std::size_t n = h.size();
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = ((k % 2 == 0) ? 1.0 : -1.0) * h[n - 1 - k];
  return out;
}

double max_shift_residual(std::span<const double> a, std::span<const double> b, double expected_at_zero) {
  const auto n = static_cast<long>(a.size());
  double worst = 0.0;
  for (long m = -n; m <= n; ++m) {
    double s = 0.0;
    for (long k = 0; k < n; ++k) {
      const long j = k + 2 * m;
      if (j >= 0 && j < static_cast<long>(b.size())) s += a[k] * b[j];
    }
    worst = std::max(worst, std::abs(s - (m == 0 ? expected_at_zero : 0.0)));
  }
  return worst;
}

WaveletFilterBank make_bank(const WaveletFamily& family) {
  WaveletFilterBank bank;
  bank.family = family;
  const std::string key = family.kind == FamilyKind::Haar ? std::string("db1") : family.name();
  if (!is_biorthogonal(family.kind)) {
    for (const auto& entry : detail::orthogonal_table()) {
      if (entry.name == key) {
        bank.orthogonal = true;
        bank.h0.assign(entry.lowpass.begin(), entry.lowpass.end());
        bank.h1 = alternate_flip(bank.h0);
        bank.g0 = bank.h0;
        bank.g1 = bank.h1;
        return bank;
      }
    }
  } else {
    for (const auto& entry : detail::biorthogonal_table()) {
      if (entry.name == key) {
        bank.orthogonal = false;
        bank.h0.assign(entry.analysis_lowpass.begin(), entry.analysis_lowpass.end());
        bank.g0.assign(entry.synthesis_lowpass.begin(), entry.synthesis_lowpass.end());
        bank.h1 = alternate_flip(bank.g0);
        bank.g1 = alternate_flip(bank.h0);
        return bank;
      }
    }
  }
  fail(ErrorKind::UnsupportedFamily, "no coefficient table for '" + family.name() + "'");
}

struct Registry {
  std::vector<WaveletFilterBank> banks;

  Registry() {
    for (const auto& family : supported_families()) {
      WaveletFilterBank bank = make_bank(family);
      const auto r = filter_bank_residuals(bank);
      if (r.lowpass_sum > kLowpassSumTolerance || r.highpass_sum > kLowpassSumTolerance ||
          r.shift_orthogonality > kShiftTolerance || r.quadrature_mirror > kLowpassSumTolerance) {
        fail(ErrorKind::Configuration, "embedded coefficients for '" + family.name() + "' fail validation");
      }
      banks.push_back(std::move(bank));
    }
  }
};

void check_finite(std::span<const double> x) {
  for (double v : x) require(std::isfinite(v), ErrorKind::RejectedInput, "non-finite sample in wavelet input");
}

}  // namespace

std::string WaveletFamily::name() const {
  switch (kind) {
    case FamilyKind::Haar: return "haar";
    case FamilyKind::Daubechies: return "db" + std::to_string(order);
    case FamilyKind::Symlets: return "sym" + std::to_string(order);
    case FamilyKind::Coiflets: return "coif" + std::to_string(order);
    case FamilyKind::Biorthogonal: return "bior" + std::to_string(order) + "." + std::to_string(dual_order);
    case FamilyKind::ReverseBior: return "rbio" + std::to_string(order) + "." + std::to_string(dual_order);
  }
  return "?";
}

WaveletFamily WaveletFamily::parse(const std::string& name) {
  auto unsupported = [&] { fail(ErrorKind::UnsupportedFamily, "unknown wavelet '" + name + "'"); };
  if (name == "haar") return {FamilyKind::Haar, 1, 0};
  const std::array<std::pair<const char*, FamilyKind>, 5> prefixes{{{"rbio", FamilyKind::ReverseBior},
                                                                   {"bior", FamilyKind::Biorthogonal},
                                                                   {"coif", FamilyKind::Coiflets},
                                                                   {"sym", FamilyKind::Symlets},
                                                                   {"db", FamilyKind::Daubechies}}};
  for (const auto& [prefix, kind] : prefixes) {
    const std::string p(prefix);
    if (name.rfind(p, 0) != 0) continue;
    const std::string rest = name.substr(p.size());
    WaveletFamily family{kind, 0, 0};
    try {
      std::size_t used = 0;
      family.order = std::stoi(rest, &used);
      if (is_biorthogonal(kind)) {
        if (used >= rest.size() || rest[used] != '.') unsupported();
        std::size_t used2 = 0;
        family.dual_order = std::stoi(rest.substr(used + 1), &used2);
        used += 1 + used2;
      }
      if (used != rest.size()) unsupported();
    } catch (const std::logic_error&) {
      unsupported();
    }
    const auto all = supported_families();
    if (std::find(all.begin(), all.end(), family) == all.end()) unsupported();
    return family;
  }
  fail(ErrorKind::UnsupportedFamily, "unknown wavelet '" + name + "'");
}

std::vector<WaveletFamily> supported_families() {
  std::vector<WaveletFamily> out{{FamilyKind::Haar, 1, 0}};
  for (int n = 1; n <= 10; ++n) out.push_back({FamilyKind::Daubechies, n, 0});
  for (int n = 2; n <= 10; ++n) out.push_back({FamilyKind::Symlets, n, 0});
  for (int n = 1; n <= 5; ++n) out.push_back({FamilyKind::Coiflets, n, 0});
  constexpr std::array<std::pair<int, int>, 12> bior{
      {{1, 1}, {1, 3}, {1, 5}, {2, 2}, {2, 4}, {2, 6}, {2, 8}, {3, 1}, {3, 3}, {3, 5}, {3, 7}, {3, 9}}};
  for (auto [p, q] : bior) out.push_back({FamilyKind::Biorthogonal, p, q});
  for (auto [p, q] : bior) out.push_back({FamilyKind::ReverseBior, p, q});
  return out;
}

FilterBankResiduals filter_bank_residuals(const WaveletFilterBank& bank) {
  FilterBankResiduals r;
  auto sum = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); };
  r.lowpass_sum = std::max(std::abs(sum(bank.h0) - std::numbers::sqrt2), std::abs(sum(bank.g0) - std::numbers::sqrt2));
  r.highpass_sum = std::max(std::abs(sum(bank.h1)), std::abs(sum(bank.g1)));
  r.shift_orthogonality = std::max({max_shift_residual(bank.h0, bank.g0, 1.0), max_shift_residual(bank.h1, bank.g1, 1.0),
                                    max_shift_residual(bank.h0, bank.g1, 0.0), max_shift_residual(bank.h1, bank.g0, 0.0)});
  const auto expected_h1 = alternate_flip(bank.g0);
  const auto expected_g1 = alternate_flip(bank.h0);
  for (std::size_t k = 0; k < bank.h1.size(); ++k) {
    r.quadrature_mirror = std::max({r.quadrature_mirror, std::abs(bank.h1[k] - expected_h1[k]),
                                    std::abs(bank.g1[k] - expected_g1[k])});
  }
  return r;
}

const WaveletFilterBank& build_filter_bank(const WaveletFamily& family) {
  static const Registry registry;
  for (const auto& bank : registry.banks) {
    if (bank.family == family) return bank;
  }
  fail(ErrorKind::UnsupportedFamily, "no coefficient table for '" + family.name() + "'");
}

void analysis_step(std::span<const double> x, const WaveletFilterBank& bank, std::span<double> low,
                   std::span<double> high) {
  const std::size_t n = x.size();
  const std::size_t half = n / 2;
  const std::size_t taps = bank.h0.size();
  for (std::size_t m = 0; m < half; ++m) {
    double lo = 0.0;
    double hi = 0.0;
    for (std::size_t k = 0; k < taps; ++k) {
      const double v = x[(2 * m + k) % n];
      lo += bank.h0[k] * v;
      hi += bank.h1[k] * v;
    }
    low[m] = lo;
    high[m] = hi;
  }
}

void synthesis_step(std::span<const double> low, std::span<const double> high, const WaveletFilterBank& bank,
                    std::span<double> x) {
  const std::size_t n = x.size();
  const std::size_t taps = bank.g0.size();
  std::fill(x.begin(), x.end(), 0.0);
  for (std::size_t m = 0; m < low.size(); ++m) {
    for (std::size_t k = 0; k < taps; ++k) x[(2 * m + k) % n] += low[m] * bank.g0[k] + high[m] * bank.g1[k];
  }
}

WpdTree wpd_analyze(std::span<const double> x, const WaveletFilterBank& bank, int level) {
  require(level >= 1 && level < 31, ErrorKind::Shape, "decomposition level must be >= 1");
  const std::size_t leaves = std::size_t{1} << level;
  require(!x.empty() && x.size() % leaves == 0, ErrorKind::Shape,
          "input length " + std::to_string(x.size()) + " not divisible by 2^" + std::to_string(level));
  check_finite(x);

  std::vector<std::vector<double>> nodes{std::vector<double>(x.begin(), x.end())};
  for (int l = 0; l < level; ++l) {
    std::vector<std::vector<double>> next(nodes.size() * 2);
    const std::size_t half = nodes.front().size() / 2;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      next[2 * i].resize(half);
      next[2 * i + 1].resize(half);
      analysis_step(nodes[i], bank, next[2 * i], next[2 * i + 1]);
    }
    nodes = std::move(next);
  }
  return WpdTree{level, NodeOrder::Natural, std::move(nodes)};
}

std::vector<double> wpd_synthesize(const WpdTree& tree, const WaveletFilterBank& bank) {
  require(tree.level >= 1 && tree.nodes.size() == (std::size_t{1} << tree.level), ErrorKind::Shape,
          "tree node count does not match its level");
  const std::size_t len = tree.node_length();
  for (const auto& node : tree.nodes) {
    require(node.size() == len && len > 0, ErrorKind::Shape, "inconsistent node lengths in tree");
  }
  WpdTree natural = tree.ordering == NodeOrder::Natural ? tree : reorder(tree, NodeOrder::Natural);
  std::vector<std::vector<double>> nodes = std::move(natural.nodes);
  while (nodes.size() > 1) {
    std::vector<std::vector<double>> parents(nodes.size() / 2);
    for (std::size_t i = 0; i < parents.size(); ++i) {
      parents[i].resize(nodes[2 * i].size() * 2);
      synthesis_step(nodes[2 * i], nodes[2 * i + 1], bank, parents[i]);
    }
    nodes = std::move(parents);
  }
  return std::move(nodes.front());
}

WpdTree reorder(const WpdTree& tree, NodeOrder target) {
  if (tree.ordering == target) return tree;
  WpdTree out{tree.level, target, std::vector<std::vector<double>>(tree.nodes.size())};
  for (std::size_t f = 0; f < tree.nodes.size(); ++f) {
    if (target == NodeOrder::Frequency) {
      out.nodes[f] = tree.nodes[gray_code(f)];
    } else {
      out.nodes[gray_code(f)] = tree.nodes[f];
    }
  }
  return out;
}

FeatureTensor featurize_wpd(std::span<const std::complex<double>> y, const WaveletFilterBank& bank, int level,
                            NodeOrder order) {
  std::vector<double> part(y.size());
  FeatureTensor tensor;
  for (int plane = 0; plane < 2; ++plane) {
    for (std::size_t n = 0; n < y.size(); ++n) part[n] = plane == 0 ? y[n].real() : y[n].imag();
    WpdTree tree = reorder(wpd_analyze(part, bank, level), order);
    if (plane == 0) {
      tensor.height = static_cast<int>(tree.node_length());
      tensor.width = static_cast<int>(tree.nodes.size());
      tensor.values.assign(static_cast<std::size_t>(2) * tensor.height * tensor.width, 0.0f);
    }
    for (int col = 0; col < tensor.width; ++col) {
      for (int row = 0; row < tensor.height; ++row) tensor.at(plane, row, col) = static_cast<float>(tree.nodes[col][row]);
    }
  }
  return tensor;
}

namespace {

class FftPlan {
 public:
  explicit FftPlan(int size) : size_(size) {
    in_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * size));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * size));
    plan_ = fftw_plan_dft_1d(size, in_, out_, FFTW_FORWARD, FFTW_ESTIMATE);
  }
  ~FftPlan() {
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;

  // New-array execution is thread-safe; buffers come from fftw_malloc so alignment matches.
  void execute(fftw_complex* in, fftw_complex* out) const { fftw_execute_dft(plan_, in, out); }
  int size() const { return size_; }

 private:
  int size_;
  fftw_complex* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

const FftPlan& plan_for(int size) {
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<FftPlan>> plans;
  std::lock_guard lock(mutex);
  auto& slot = plans[size];
  if (!slot) slot = std::make_unique<FftPlan>(size);
  return *slot;
}

int hop_size(const StftSettings& s) {
  require(s.fft_size >= 2, ErrorKind::Parameter, "fft size must be >= 2");
  require(s.overlap >= 0.0 && s.overlap < 1.0, ErrorKind::Parameter, "overlap must lie in [0, 1)");
  return std::max(1, static_cast<int>(std::lround(s.fft_size * (1.0 - s.overlap))));
}

}  // namespace

int stft_frame_count(std::size_t length, const StftSettings& settings) {
  const int hop = hop_size(settings);
  require(length >= static_cast<std::size_t>(settings.fft_size), ErrorKind::Shape,
          "signal shorter than one STFT frame");
  return static_cast<int>((length - settings.fft_size) / hop) + 1;
}

FeatureTensor featurize_stft(std::span<const std::complex<double>> y, const StftSettings& settings) {
  const int frames = stft_frame_count(y.size(), settings);
  const int hop = hop_size(settings);
  const int n = settings.fft_size;
  for (const auto& v : y) {
    require(std::isfinite(v.real()) && std::isfinite(v.imag()), ErrorKind::RejectedInput, "non-finite STFT input");
  }

  std::vector<double> window(n);
  for (int i = 0; i < n; ++i) window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);

  const FftPlan& plan = plan_for(n);
  auto* in = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
  auto* out = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
  std::unique_ptr<fftw_complex, decltype(&fftw_free)> in_guard(in, fftw_free);
  std::unique_ptr<fftw_complex, decltype(&fftw_free)> out_guard(out, fftw_free);

  FeatureTensor tensor{2, frames, n, std::vector<float>(static_cast<std::size_t>(2) * frames * n)};
  for (int f = 0; f < frames; ++f) {
    const std::size_t start = static_cast<std::size_t>(f) * hop;
    for (int i = 0; i < n; ++i) {
      in[i][0] = y[start + i].real() * window[i];
      in[i][1] = y[start + i].imag() * window[i];
    }
    plan.execute(in, out);
    for (int k = 0; k < n; ++k) {
      tensor.at(0, f, k) = static_cast<float>(out[k][0]);
      tensor.at(1, f, k) = static_cast<float>(out[k][1]);
    }
  }
  return tensor;
}

void write_feature_tensor(std::ostream& out, const FeatureTensor& tensor) {
  out.write("WKFT", 4);
  binary::write_u32(out, static_cast<std::uint32_t>(tensor.planes));
  binary::write_u32(out, static_cast<std::uint32_t>(tensor.height));
  binary::write_u32(out, static_cast<std::uint32_t>(tensor.width));
  binary::write_f32s(out, tensor.values);
}

FeatureTensor read_feature_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  binary::check_stream(in, "feature tensor header");
  require(std::string(magic, 4) == "WKFT", ErrorKind::Io, "bad feature tensor magic");
  FeatureTensor t;
  t.planes = static_cast<int>(binary::read_u32(in));
  t.height = static_cast<int>(binary::read_u32(in));
  t.width = static_cast<int>(binary::read_u32(in));
  require(t.planes > 0 && t.height > 0 && t.width > 0 && t.planes <= 16 && t.height <= (1 << 20) && t.width <= (1 << 20),
          ErrorKind::Io, "implausible feature tensor shape");
  t.values.resize(static_cast<std::size_t>(t.planes) * t.height * t.width);
  binary::read_f32s(in, t.values);
  return t;
}

}  // namespace wkpnet::wavelet
