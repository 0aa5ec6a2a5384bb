#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace drf {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read, or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Input text is not syntactically valid. Carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Input is valid text but does not match the expected record layout.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& msg, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// A domain invariant does not hold (confidence range, frame count, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration value or option combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes incompatible for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A frame could not be pelvis-aligned. Carries the offending frame index.
class NormalizationError : public Error {
 public:
  NormalizationError(const std::string& msg, std::size_t frame_index)
      : Error("frame " + std::to_string(frame_index) + ": " + msg),
        frame_index_(frame_index) {}
  std::size_t frame_index() const { return frame_index_; }

 private:
  std::size_t frame_index_;
};

/// Sequence height is too small to scale (collapsed pose).
class DegenerateHeightError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace drf
