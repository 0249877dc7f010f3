#pragma once

#include <stdexcept>
#include <string>

namespace progress {

/// Dimension mismatch between an input and the object consuming it.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// API misuse, e.g. a stale forward cache handed to backward.
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Invalid or incomplete configuration (unknown assay pair, bad flag value).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Input files do not follow the expected column layout.
class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Data cannot support the requested computation (too few rows, zero variance, ...).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A metric has no defined value for the given input (no comparable pairs, no events).
class UndefinedMetricError : public DataError {
public:
    using DataError::DataError;
};

/// Iterative fit failed to converge.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double last_value)
        : std::runtime_error(what + " (last criterion " + std::to_string(last_value) + ")"),
          last_value_(last_value) {}
    double last_value() const noexcept { return last_value_; }

private:
    double last_value_;
};

/// Training produced a non-finite loss.
class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& what, int epoch)
        : std::runtime_error(what + " at epoch " + std::to_string(epoch)), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

}  // namespace progress
