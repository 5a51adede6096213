#pragma once

#include <stdexcept>
#include <string>

namespace concurl {

// Base of every library exception. The CLI maps the subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
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

class DegeneratePrototypeError : public NumericError {
public:
    using NumericError::NumericError;
};

}  // namespace concurl
