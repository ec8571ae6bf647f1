#pragma once

#include <stdexcept>
#include <string>

namespace casc {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration value or model shape is inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A call received arguments that violate its contract.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Input is valid in shape but numerically degenerate (e.g. all-zero signal).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Dataset files are missing, empty, or malformed.
class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// A pretrained metric asset could not be located or verified.
class AssetError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace casc
