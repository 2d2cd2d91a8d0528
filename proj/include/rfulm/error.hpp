#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace rfulm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents do not fit the operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// An argument is outside its documented domain.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Non-finite data where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Iterative solver gave up; carries the best parameters seen.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, std::vector<double> best)
        : Error(what), best_params(std::move(best)) {}
    std::vector<double> best_params;
};

class GeometryError : public Error {
public:
    using Error::Error;
};

class CalibrationError : public Error {
public:
    using Error::Error;
};

class MeasurementError : public Error {
public:
    using Error::Error;
};

/// API misuse (wrong coordinate space, missing forward cache, ...).
class UsageError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Config file problem; `line` is 1-based, 0 when not tied to a line.
class ConfigError : public Error {
public:
    ConfigError(const std::string& what, int line_no = 0) : Error(what), line(line_no) {}
    int line;
};

}  // namespace rfulm
