#pragma once

#include <stdexcept>
#include <string>

namespace cnnf {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map any library failure to exit code 1.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid or mismatched tensor shapes (empty extents, inner-dim disagreement).
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Operation called in the wrong phase, e.g. backward without a cached forward.
class StateError : public Error {
public:
    explicit StateError(const std::string& msg) : Error(msg) {}
};

// Inconsistent configuration (unknown variant id, dropout rate out of range).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Out-of-domain runtime value (label outside [0, classes)).
class ValueError : public Error {
public:
    explicit ValueError(const std::string& msg) : Error(msg) {}
};

// File missing or unreadable.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// File exists but its contents violate the format contract.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Training diverged (non-finite loss); carries the diagnostics in the message.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace cnnf
