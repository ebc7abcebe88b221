#pragma once

#include <stdexcept>
#include <string>

namespace skinet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition (shape, range, count).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Normalization bounds with phi_max <= phi_min.
class DegenerateRangeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Dataset layout problems; the message always names the offending path.
class IngestionError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

/// Invalid architecture description (block specs, dropout positions, shapes).
class ConstructionError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(int epoch, const std::string& what)
      : Error("training diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

/// Explainer requested on a model that cannot support it (e.g. guided
/// backprop on a network without ReLU units).
class UnsupportedModelError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace skinet
