#pragma once

#include <stdexcept>
#include <string>

namespace robodet {

/// Tensor or parameter dimensions disagree with what an operation expects.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or out-of-range user input (annotation files, configs, specs).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Base for everything that can go wrong reading a weight file.
class WeightFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BadMagicError : public WeightFileError {
 public:
  using WeightFileError::WeightFileError;
};

class VersionError : public WeightFileError {
 public:
  using WeightFileError::WeightFileError;
};

class TruncatedError : public WeightFileError {
 public:
  using WeightFileError::WeightFileError;
};

class SpecMismatchError : public WeightFileError {
 public:
  using WeightFileError::WeightFileError;
};

/// Training produced a NaN or infinite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace robodet
