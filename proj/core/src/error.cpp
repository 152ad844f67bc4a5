#include "wkpnet/error.hpp"

namespace wkpnet {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::RejectedInput: return "rejected input";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Configuration: return "configuration error";
    case ErrorKind::Parameter: return "parameter error";
    case ErrorKind::UnsupportedFamily: return "unsupported wavelet family";
    case ErrorKind::Refusal: return "refused";
    case ErrorKind::Incompatibility: return "incompatible inputs";
    case ErrorKind::Divergence: return "training diverged";
    case ErrorKind::EmptySet: return "empty input set";
    case ErrorKind::DegenerateBatch: return "degenerate batch";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

}  // namespace wkpnet
