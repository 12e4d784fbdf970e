#pragma once

#include <stdexcept>
#include <string>

namespace slowdef {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed file contents (bad magic, bad header field, truncated payload).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Filesystem-level failure (missing file, unwritable path).
class IoError : public Error {
public:
    using Error::Error;
};

/// Grid/matrix shape mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Argument outside its admissible domain.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Bad run configuration (unknown key, inconsistent option set).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Interferogram network whose epoch graph is not connected.
class TopologyError : public Error {
public:
    using Error::Error;
};

/// Training cannot start (e.g. single-class corpus).
class TrainingError : public Error {
public:
    using Error::Error;
};

/// Numerical failure (factorization breakdown, non-finite values, no convergence).
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace slowdef
