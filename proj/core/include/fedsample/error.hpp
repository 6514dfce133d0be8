#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedsample {

enum class ErrorCode {
  invalid_argument,
  unsupported,
  insufficient_data,
  numeric_error,
  parse_error,
  internal_error,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Single exception type for the library; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

inline void require(bool condition, ErrorCode code, const char* what) {
  if (!condition) fail(code, what);
}

}  // namespace fedsample
