#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sdvae {

// Base of every error the library throws. `kind()` is a stable short tag
// used by the CLI when printing machine-parseable error lines.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

// Non-conformable shapes handed to a primitive or model routine.
class ShapeError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "shape"; }
};

// NaN/Inf produced by a forward op, or a non-finite gradient.
class NumericError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "numeric"; }
};

// Argument outside an operation's mathematical domain (log of x <= 0, sigma <= 0).
class DomainError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "domain"; }
};

// Invalid user-supplied data (labels not one-hot, pixels outside [0,1]).
class ValidationError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "validation"; }
};

// API misuse: non-scalar backward root, unlabeled loss on labeled rows, ...
class UsageError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "usage"; }
};

// Bad configuration value. `field()` names the offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& message)
        : Error(field + ": " + message), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }
    const char* kind() const noexcept override { return "config"; }

private:
    std::string field_;
};

// Broken graph record; should never escape a correct build.
class InternalError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "internal"; }
};

// Finite-difference oracle detected a non-deterministic objective.
class OracleError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "oracle"; }
};

class IoError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "io"; }
};

// Malformed IDX / checkpoint bytes; `offset()` is the byte position of the fault.
class ParseError : public IoError {
public:
    ParseError(const std::string& message, std::size_t offset)
        : IoError(message + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }
    const char* kind() const noexcept override { return "parse"; }

private:
    std::size_t offset_;
};

}  // namespace sdvae
