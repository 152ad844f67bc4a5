#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace wkpnet::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kConfigError = 3,
  kDataError = 4,
  kDivergence = 5,
  kIncompatible = 6,
  kRefused = 7,
};

/// Parses and dispatches one invocation. Logs go to `err`; only --print-schema,
/// --help and the complexity table are written to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace wkpnet::cli
