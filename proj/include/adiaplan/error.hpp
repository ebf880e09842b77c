#pragma once

#include <stdexcept>
#include <string>

namespace adiaplan {

/// Failure categories shared by every module. The CLI maps them onto exit codes.
enum class ErrorKind {
  InvalidArgument,
  Validation,
  Parse,
  Numerical,
  ThresholdNotFound,
  UnsupportedFormat,
  CorruptFile,
  DegenerateInput,
  EmptyInput,
  Io,
};

inline const char *to_string(ErrorKind k) {
  switch (k) {
  case ErrorKind::InvalidArgument: return "invalid-argument";
  case ErrorKind::Validation: return "validation-error";
  case ErrorKind::Parse: return "parse-error";
  case ErrorKind::Numerical: return "numerical-error";
  case ErrorKind::ThresholdNotFound: return "threshold-not-found";
  case ErrorKind::UnsupportedFormat: return "unsupported-format";
  case ErrorKind::CorruptFile: return "corrupt-file";
  case ErrorKind::DegenerateInput: return "degenerate-input";
  case ErrorKind::EmptyInput: return "empty-input";
  case ErrorKind::Io: return "io-error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind), detail_(detail) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string &detail() const noexcept { return detail_; }

private:
  ErrorKind kind_;
  std::string detail_;
};

/// Raised by the threshold search; carries the best efficiency that was reached.
class ThresholdNotFound : public Error {
public:
  ThresholdNotFound(double efficiency_at_hi, const std::string &what)
      : Error(ErrorKind::ThresholdNotFound, what), efficiency_at_hi_(efficiency_at_hi) {}

  double efficiency_at_hi() const noexcept { return efficiency_at_hi_; }

private:
  double efficiency_at_hi_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string &what) { throw Error(kind, what); }

} // namespace adiaplan
