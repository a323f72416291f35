#pragma once

#include <stdexcept>
#include <string>

namespace cacvit {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape / range violations in tensor and image ops.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid or inconsistent configuration (model dims, run config keys).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed file contents (bad magic, truncated payload).
class FormatError : public Error {
public:
    using Error::Error;
};

// NaN/Inf encountered where finite values are required.
class NumericalError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace cacvit
