#pragma once

#include <stdexcept>
#include <string>

namespace optosqz {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numeric routine produced a value outside the representable or physical range.
class NumericError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class OutOfDomain : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class DegenerateProfile : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class NotSymmetric : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class NonPositiveEigenvalue : public NumericError {
 public:
  using NumericError::NumericError;
};

class IntegrationDiverged : public NumericError {
 public:
  using NumericError::NumericError;
};

class GainOverflow : public NumericError {
 public:
  using NumericError::NumericError;
};

class IllConditioned : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Objective evaluation failed; wraps the underlying numeric failure.
class EvaluationFailed : public NumericError {
 public:
  using NumericError::NumericError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace optosqz
