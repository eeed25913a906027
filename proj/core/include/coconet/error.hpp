#pragma once

#include <stdexcept>
#include <string>

namespace coconet {

// Broad failure classes. The CLI maps these onto exit codes.
enum class ErrorKind {
    Config,  // bad user configuration or arguments
    Data,    // unreadable / inconsistent inputs
    Numeric, // non-finite values, undefined statistics
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

// Raised by a fusion metric; carries the short metric name ("SCD", "VIF", ...).
class MetricError : public NumericError {
public:
    MetricError(std::string metric, const std::string& what)
        : NumericError(metric + ": " + what), metric_(std::move(metric)) {}

    const std::string& metric() const noexcept { return metric_; }

private:
    std::string metric_;
};

} // namespace coconet
