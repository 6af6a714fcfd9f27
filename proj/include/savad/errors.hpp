#pragma once

#include <stdexcept>
#include <string>

namespace savad {

// Exit-code mapping used by the CLI:
//   UsageError / ConfigError / ParameterError -> 1
//   DataError and subclasses                  -> 2
//   VerificationError / NumericError          -> 3

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit the operation.
class ShapeError : public UsageError {
public:
    using UsageError::UsageError;
};

/// Invalid architecture or run configuration.
class ConfigError : public UsageError {
public:
    using UsageError::UsageError;
};

/// Scalar argument outside its admissible range.
class ParameterError : public UsageError {
public:
    using UsageError::UsageError;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MagicError : public DataError {
public:
    using DataError::DataError;
};

class TruncatedError : public DataError {
public:
    using DataError::DataError;
};

class NonFiniteError : public DataError {
public:
    using DataError::DataError;
};

/// A metric is undefined for the given labels (e.g. only one class present).
class UndefinedMetricError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class VerificationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite gradient or parameter encountered during optimisation.
class NumericError : public VerificationError {
public:
    using VerificationError::VerificationError;
};

}  // namespace savad
