#pragma once

#include <stdexcept>
#include <string>

namespace hdphmm {

// Base classes group errors by how the CLI maps them to exit codes:
// validation -> 2, numerical -> 3, io -> 4.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : ValidationError {
  using ValidationError::ValidationError;
};

struct ShapeMismatch : ValidationError {
  using ValidationError::ValidationError;
};

struct LengthMismatch : ValidationError {
  using ValidationError::ValidationError;
};

struct RangeError : ValidationError {
  using ValidationError::ValidationError;
};

struct EmptyData : ValidationError {
  using ValidationError::ValidationError;
};

struct InvalidWindow : ValidationError {
  using ValidationError::ValidationError;
};

struct NoSpikes : ValidationError {
  using ValidationError::ValidationError;
};

struct UncoveredState : ValidationError {
  using ValidationError::ValidationError;
};

struct ParseError : ValidationError {
  ParseError(const std::string& what, long row, long col)
      : ValidationError(what + " (row " + std::to_string(row) + ", col " +
                        std::to_string(col) + ")"),
        row(row),
        col(col) {}
  long row;
  long col;
};

struct FileNotFound : IoError {
  using IoError::IoError;
};

struct MonotonicityViolation : NumericalError {
  using NumericalError::NumericalError;
};

}  // namespace hdphmm
