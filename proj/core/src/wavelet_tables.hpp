#pragma once

#include <span>
#include <string_view>
#include <vector>

namespace wkpnet::wavelet::detail {

struct OrthogonalEntry {
  std::string_view name;
  std::span<const double> lowpass;
};

struct BiorthogonalEntry {
  std::string_view name;
  std::span<const double> analysis_lowpass;
  std::span<const double> synthesis_lowpass;
};

const std::vector<OrthogonalEntry>& orthogonal_table();
const std::vector<BiorthogonalEntry>& biorthogonal_table();

}  // namespace wkpnet::wavelet::detail
