#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mtpn {

/// Base of every error the library throws. Carries a one-line message that the
/// CLI prints verbatim.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A tensor shape or length did not satisfy an operator's contract.
class ShapeError : public Error {
 public:
  ShapeError(std::string op, std::string dimension, const std::string& detail)
      : Error(op + ": bad " + dimension + ": " + detail),
        op_(std::move(op)),
        dimension_(std::move(dimension)) {}

  const std::string& op() const noexcept { return op_; }
  const std::string& dimension() const noexcept { return dimension_; }

 private:
  std::string op_;
  std::string dimension_;
};

/// An argument value violated a documented precondition.
class ValueError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& detail)
      : Error("config: " + field + ": " + detail), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Raised when a gradient is requested through a non-differentiable op.
class GradientError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  CheckpointError(std::string tensor, const std::string& detail)
      : Error(tensor.empty() ? "checkpoint: " + detail
                             : "checkpoint: tensor '" + tensor + "': " + detail),
        tensor_(std::move(tensor)) {}

  /// Name of the offending tensor, empty for header-level problems.
  const std::string& tensor() const noexcept { return tensor_; }

 private:
  std::string tensor_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, const std::string& detail)
      : Error("training diverged at epoch " + std::to_string(epoch) + ": " + detail),
        epoch_(epoch) {}

  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtpn
