#pragma once

#include <stdexcept>
#include <string>

namespace cosda {

// Base for all library errors. Subclasses map onto CLI exit codes:
// config/usage problems exit 2, runtime failures exit 3.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape / layout mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value (bad hyperparameter, malformed spec, unknown key).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Bad data content (empty dataset, label out of range).
class DataError : public Error {
public:
    using Error::Error;
};

// Operation called on an object in the wrong state (e.g. empty accumulator).
class StateError : public Error {
public:
    using Error::Error;
};

// Schedule evaluated outside its epoch range.
class ScheduleError : public Error {
public:
    using Error::Error;
};

// Argument outside the mathematical domain of a formula.
class DomainError : public Error {
public:
    using Error::Error;
};

// A pseudo-label refiner returned rows that are not probability vectors.
class HookContractError : public Error {
public:
    using Error::Error;
};

// Malformed input file.
class ParseError : public Error {
public:
    using Error::Error;
};

// Evaluation-protocol misuse (mismatched checkpoint/domain lists, K too small).
class ProtocolError : public Error {
public:
    using Error::Error;
};

// Filesystem failure.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace cosda
