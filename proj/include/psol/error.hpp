#pragma once

#include <stdexcept>
#include <string>

namespace psol {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad or missing run configuration (CLI exit code 1).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data is unusable (CLI exit code 2). Subclasses narrow the cause.
class DataError : public Error {
public:
    using Error::Error;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

class TruncationError : public FormatError {
public:
    using FormatError::FormatError;
};

class ValidationError : public DataError {
public:
    using DataError::DataError;
};

class DimensionError : public DataError {
public:
    using DataError::DataError;
};

/// Training diverged or produced non-finite values.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace psol
