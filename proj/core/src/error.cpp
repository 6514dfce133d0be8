#include "fedsample/error.hpp"

namespace fedsample {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::unsupported: return "unsupported";
    case ErrorCode::insufficient_data: return "insufficient-data";
    case ErrorCode::numeric_error: return "numeric-error";
    case ErrorCode::parse_error: return "parse-error";
    case ErrorCode::internal_error: return "internal-error";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& what) {
  throw Error(code, std::string(to_string(code)) + ": " + what);
}

}  // namespace fedsample
