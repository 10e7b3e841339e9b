#pragma once

#include <stdexcept>
#include <string>

namespace ggn {

/// Failure categories surfaced to callers and mapped onto CLI exit codes.
enum class ErrorCategory {
  InvalidArgument,
  SingularSystem,
  Parse,
  UnsupportedFeature,
  Config,
  Io,
  Numerical,
};

[[nodiscard]] constexpr const char* to_string(ErrorCategory c) noexcept {
  switch (c) {
    case ErrorCategory::InvalidArgument: return "invalid-argument";
    case ErrorCategory::SingularSystem: return "singular-system";
    case ErrorCategory::Parse: return "parse-error";
    case ErrorCategory::UnsupportedFeature: return "unsupported-feature";
    case ErrorCategory::Config: return "config-error";
    case ErrorCategory::Io: return "io-error";
    case ErrorCategory::Numerical: return "numerical-error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  [[nodiscard]] ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& what)
      : Error(ErrorCategory::InvalidArgument, what) {}
};

/// Normal matrix is rank deficient or exceeds the configured condition cap.
struct SingularSystem : Error {
  SingularSystem(const std::string& what, double condition_estimate, int agent = -1)
      : Error(ErrorCategory::SingularSystem, what),
        condition(condition_estimate),
        agent_id(agent) {}
  double condition;
  int agent_id;
};

struct ParseError : Error {
  ParseError(const std::string& what, int line_number)
      : Error(ErrorCategory::Parse, "line " + std::to_string(line_number) + ": " + what),
        line(line_number) {}
  int line;
};

struct UnsupportedFeature : Error {
  explicit UnsupportedFeature(const std::string& what)
      : Error(ErrorCategory::UnsupportedFeature, what) {}
};

struct ConfigError : Error {
  ConfigError(const std::string& field_path, const std::string& what)
      : Error(ErrorCategory::Config, field_path + ": " + what), field(field_path) {}
  std::string field;
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorCategory::Io, what) {}
};

/// Iterative procedure failed to converge or produced non-finite values.
struct NumericalError : Error {
  explicit NumericalError(const std::string& what) : Error(ErrorCategory::Numerical, what) {}
};

}  // namespace ggn
