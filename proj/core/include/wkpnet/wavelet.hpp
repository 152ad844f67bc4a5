#pragma once

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace wkpnet::wavelet {

enum class FamilyKind { Haar, Daubechies, Symlets, Coiflets, Biorthogonal, ReverseBior };

/// One member of a wavelet family, e.g. db4 = {Daubechies, 4}, bior2.2 = {Biorthogonal, 2, 2}.
struct WaveletFamily {
  FamilyKind kind = FamilyKind::Haar;
  int order = 1;
  int dual_order = 0;

  /// Short conventional name: "haar", "db4", "sym5", "coif2", "bior2.2", "rbio3.3".
  std::string name() const;
  static WaveletFamily parse(const std::string& name);

  bool operator==(const WaveletFamily&) const = default;
};

/// Every family member with embedded coefficients.
std::vector<WaveletFamily> supported_families();

/// Analysis (h0, h1) and synthesis (g0, g1) filters, all stored in correlation
/// orientation: analysis computes out[m] = sum_k h[k] x[(2m + k) mod n], and
/// synthesis scatters x[(2m + k) mod n] += a[m] g0[k] + d[m] g1[k].
struct WaveletFilterBank {
  WaveletFamily family;
  bool orthogonal = true;
  std::vector<double> h0;
  std::vector<double> h1;
  std::vector<double> g0;
  std::vector<double> g1;
};

/// Largest violation of the bank's structural invariants (filter sums, double-shift
/// orthonormality or biorthogonality, quadrature-mirror relations).
struct FilterBankResiduals {
  double lowpass_sum = 0.0;
  double highpass_sum = 0.0;
  double shift_orthogonality = 0.0;
  double quadrature_mirror = 0.0;
};

FilterBankResiduals filter_bank_residuals(const WaveletFilterBank& bank);

/// Builds the bank from the embedded tables and validates it; throws
/// UnsupportedFamily for unknown members and Configuration if a table fails validation.
const WaveletFilterBank& build_filter_bank(const WaveletFamily& family);

enum class NodeOrder { Natural, Frequency };

/// Full packet tree at a single level: nodes[i] is node i in natural (Paley) order.
struct WpdTree {
  int level = 0;
  NodeOrder ordering = NodeOrder::Natural;
  std::vector<std::vector<double>> nodes;

  std::size_t node_length() const { return nodes.empty() ? 0 : nodes.front().size(); }
};

/// Index of the natural-order node that lands at frequency position `position`.
inline std::size_t gray_code(std::size_t position) { return position ^ (position >> 1); }

/// One two-channel split under periodic extension.
void analysis_step(std::span<const double> x, const WaveletFilterBank& bank, std::span<double> low,
                   std::span<double> high);
/// Inverse of analysis_step for perfect-reconstruction banks.
void synthesis_step(std::span<const double> low, std::span<const double> high, const WaveletFilterBank& bank,
                    std::span<double> x);

WpdTree wpd_analyze(std::span<const double> x, const WaveletFilterBank& bank, int level);
std::vector<double> wpd_synthesize(const WpdTree& tree, const WaveletFilterBank& bank);

/// Reorders natural-order nodes into frequency order (or back).
WpdTree reorder(const WpdTree& tree, NodeOrder target);

/// Network input: (plane, row, column) with plane 0 = I and plane 1 = Q.
struct FeatureTensor {
  int planes = 2;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  float at(int plane, int row, int col) const {
    return values[(static_cast<std::size_t>(plane) * height + row) * width + col];
  }
  float& at(int plane, int row, int col) {
    return values[(static_cast<std::size_t>(plane) * height + row) * width + col];
  }
};

/// Plane p column j holds node j's coefficient sequence (frequency order by
/// default); row t is the coefficient index. Shape (2, n / 2^level, 2^level).
FeatureTensor featurize_wpd(std::span<const std::complex<double>> y, const WaveletFilterBank& bank, int level,
                            NodeOrder order = NodeOrder::Frequency);

struct StftSettings {
  int fft_size = 512;
  double overlap = 0.75;
};

/// Hann-windowed STFT with truncated frames. Shape (2, frames, fft_size): row = frame,
/// column = FFT bin, plane 0 = real part, plane 1 = imaginary part.
FeatureTensor featurize_stft(std::span<const std::complex<double>> y, const StftSettings& settings = {});
int stft_frame_count(std::size_t length, const StftSettings& settings = {});

/// 16-byte header ("WKFT", planes, height, width as little-endian uint32) then
/// float32 payload, plane-major then row-major.
void write_feature_tensor(std::ostream& out, const FeatureTensor& tensor);
FeatureTensor read_feature_tensor(std::istream& in);

}  // namespace wkpnet::wavelet
