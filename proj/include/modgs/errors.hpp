// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace modgs {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input data is invalid or inconsistent (bad shapes, out-of-range values, bad files).
class DataError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public DataError {
public:
    using DataError::DataError;
};

class DomainError : public DataError {
public:
    using DataError::DataError;
};

class RangeError : public DataError {
public:
    using DataError::DataError;
};

/// A least-squares or statistics problem has no unique solution.
class DegenerateError : public DataError {
public:
    using DataError::DataError;
};

class GenerationError : public DataError {
public:
    using DataError::DataError;
};

class SamplingError : public DataError {
public:
    using DataError::DataError;
};

class InitializationError : public DataError {
public:
    using DataError::DataError;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

/// Optimization diverged or otherwise failed.
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace modgs
