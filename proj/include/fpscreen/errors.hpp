#ifndef FPSCREEN_ERRORS_HPP_
#define FPSCREEN_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace fpscreen {

// Error taxonomy mirrors the CLI exit codes: usage (1), data (2),
// numerical failure (3).

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Argument outside the time domain of a basis or model.
struct DomainError : DataError {
  explicit DomainError(const std::string& msg) : DataError(msg) {}
};

// A subject does not carry enough observations for the requested operation.
struct InsufficientDataError : DataError {
  explicit InsufficientDataError(const std::string& msg) : DataError(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// A linear system or orthogonalization collapsed; callers may retry with a
// fresh random initialization.
struct DegeneracyError : NumericalError {
  explicit DegeneracyError(const std::string& msg) : NumericalError(msg) {}
};

struct ConvergenceError : NumericalError {
  explicit ConvergenceError(const std::string& msg) : NumericalError(msg) {}
};

}  // namespace fpscreen

#endif  // FPSCREEN_ERRORS_HPP_
