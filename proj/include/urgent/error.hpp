#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace urgent {

enum class ErrorCode {
  Precondition,
  Conflict,
  NotFound,
  Gone,
  Integrity,
  NoCapacity,
  Validation,
  Rejected,
  EmptyDomain,
};

std::string_view to_string(ErrorCode code);

// Single exception type for every module; the code drives HTTP status mapping.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorCode::Precondition, what);
}

}  // namespace urgent
