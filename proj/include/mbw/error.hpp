#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mbw {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Curve parameters outside their admissible domain.
class ParameterDomainError : public Error {
 public:
  using Error::Error;
};

/// A cumulative series is not strictly increasing. `index()` is the left
/// element of the offending adjacent pair.
class MonotonicityError : public Error {
 public:
  MonotonicityError(const std::string& what, std::size_t index)
      : Error(what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// The modelled GAS curve never reaches the requested threshold inside the
/// search bracket.
class NoCrossingError : public Error {
 public:
  using Error::Error;
};

/// Standard-method FRC would divide by 1 - c(k) <= 0.
class DivisionDomainError : public Error {
 public:
  using Error::Error;
};

/// No chain could be started from a point with finite log density.
class InitializationError : public Error {
 public:
  using Error::Error;
};

/// Agreement data missing a method value for some physical test.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Machine-readable category of a data-file validation failure.
enum class DataErrorKind {
  Io,
  MalformedNumeric,
  MissingField,
  LengthMismatch,
  NonContiguousIndex,
  MonotonicityViolation,
  NonPositiveGas,
  NonZeroStart,
  TooShort,
  BadSchema,
};

inline const char* to_string(DataErrorKind kind) {
  switch (kind) {
    case DataErrorKind::Io: return "io";
    case DataErrorKind::MalformedNumeric: return "malformed_numeric";
    case DataErrorKind::MissingField: return "missing_field";
    case DataErrorKind::LengthMismatch: return "length_mismatch";
    case DataErrorKind::NonContiguousIndex: return "non_contiguous_index";
    case DataErrorKind::MonotonicityViolation: return "monotonicity_violation";
    case DataErrorKind::NonPositiveGas: return "non_positive_gas";
    case DataErrorKind::NonZeroStart: return "non_zero_start";
    case DataErrorKind::TooShort: return "too_short";
    case DataErrorKind::BadSchema: return "bad_schema";
  }
  return "unknown";
}

/// Validation failure while reading or constructing washout data. Carries the
/// test id, the breath index (or -1), and the 1-based file line (or -1).
class DataError : public Error {
 public:
  DataError(DataErrorKind kind, const std::string& message,
            std::string test_id = {}, long breath = -1, long line = -1)
      : Error(compose(kind, message, test_id, breath, line)),
        kind_(kind),
        test_id_(std::move(test_id)),
        breath_(breath),
        line_(line) {}

  DataErrorKind kind() const noexcept { return kind_; }
  const std::string& test_id() const noexcept { return test_id_; }
  long breath() const noexcept { return breath_; }
  long line() const noexcept { return line_; }

 private:
  static std::string compose(DataErrorKind kind, const std::string& message,
                             const std::string& test_id, long breath,
                             long line) {
    std::string s = std::string("[") + to_string(kind) + "]";
    if (!test_id.empty()) s += " test " + test_id;
    if (breath >= 0) s += " breath " + std::to_string(breath);
    if (line >= 0) s += " line " + std::to_string(line);
    return s + ": " + message;
  }

  DataErrorKind kind_;
  std::string test_id_;
  long breath_;
  long line_;
};

}  // namespace mbw
