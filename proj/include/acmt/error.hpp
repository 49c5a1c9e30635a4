#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace acmt {

// Error categories map 1:1 onto the CLI's machine-parsable failure line and exit code.
enum class ErrorCategory {
  usage,         // bad flags or config values
  config,        // config file unreadable or has unknown keys
  io,            // file system / parse failures
  shape,         // tensor or container shape mismatch
  precondition,  // argument outside an operation's domain
  numeric,       // NaN / divergence
  mismatch,      // checkpoint vs preset, labels vs vertices, ...
};

constexpr std::string_view category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return "usage";
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::precondition: return "precondition";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::mismatch: return "mismatch";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

inline void require(bool condition, ErrorCategory category, const std::string& message) {
  if (!condition) throw Error(category, message);
}

}  // namespace acmt
