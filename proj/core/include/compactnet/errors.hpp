#pragma once

#include <stdexcept>
#include <string>

namespace compactnet {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A network description that violates its own invariants or a transformation
// request that is out of range.
class SpecError : public Error {
 public:
  using Error::Error;
};

// Input spatial dims that cannot carry the network's stride chain.
class DimensionError : public SpecError {
 public:
  using SpecError::SpecError;
};

// Channel query outside a latency table's sampled grid.
class RangeError : public Error {
 public:
  using Error::Error;
};

// Malformed file content; line is 1-based, 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Raised when a loss or gradient becomes non-finite during training.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, int epoch, int batch)
      : Error(what), epoch_(epoch), batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

}  // namespace compactnet
