#pragma once

#include <stdexcept>
#include <string>

namespace aminet {

/// Base of every error raised by the library. The CLI maps each subclass
/// onto a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree, or an axis is out of range.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A bag (row) has no valid instance left after masking.
class DegenerateBagError : public Error {
 public:
  using Error::Error;
};

/// A token id does not address a row of the embedding table.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Synthetic generation could not hit its target within the rejection budget.
class GenerationError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace aminet
