#pragma once

#include <stdexcept>
#include <string>

namespace merv {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents or axes do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Encoders cannot be brought to a common temporal grid.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary container, CSV or JSON input.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training diverged; carries the step at which it happened.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, long step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace merv
