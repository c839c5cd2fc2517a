#pragma once

#include <stdexcept>
#include <string>

namespace coda {

// Shape/dimension mismatches between arrays or network layers.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or other numeric failures.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or truncated files (bad magic, CRC mismatch, short reads).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration: unknown keys, out-of-range values, conflicts.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse (e.g. backward without a retained forward state).
struct UsageError : std::logic_error {
    explicit UsageError(const std::string& msg) : std::logic_error(msg) {}
};

// Well-formed inputs that cannot be combined (incompatible feature
// dimensions, operations without the data they need).
struct SemanticError : std::runtime_error {
    explicit SemanticError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace coda
