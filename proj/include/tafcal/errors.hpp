#pragma once

#include <stdexcept>
#include <string>

namespace tafcal {

// Error categories map one-to-one onto C API status codes and CLI exit codes.
enum class ErrorCategory {
  invalid_argument,  // bad shapes, out-of-range values
  config,            // malformed configuration, unknown keys
  io,                // missing files, bad magic, truncated payloads
  state,             // operation not legal in the current state
  numeric,           // divergence, integrity-check failures
  internal,
};

inline const char* to_string(ErrorCategory cat) {
  switch (cat) {
    case ErrorCategory::invalid_argument: return "invalid_argument";
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::state: return "state";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::internal: return "internal";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory cat, const std::string& msg)
      : std::runtime_error(msg), cat_(cat) {}

  ErrorCategory category() const { return cat_; }

 private:
  ErrorCategory cat_;
};

[[noreturn]] inline void fail(ErrorCategory cat, const std::string& msg) {
  throw Error(cat, msg);
}

}  // namespace tafcal
