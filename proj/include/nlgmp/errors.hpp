#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nlgmp {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Mismatched vector/matrix dimensions between operands.
struct DimensionError : Error {
    using Error::Error;
};

/// Invalid parameter or violated call precondition (configuration-level).
struct ParamError : Error {
    using Error::Error;
};

/// Text could not be parsed; carries the byte offset of the failure.
struct ParseError : Error {
    ParseError(const std::string& what, std::size_t at)
        : Error(what + " at offset " + std::to_string(at)), offset(at) {}
    std::size_t offset;
};

/// A matrix required to be invertible is singular or too ill-conditioned.
struct ConditioningError : Error {
    using Error::Error;
};

/// A matrix required to be positive semidefinite is not, beyond repair tolerance.
struct NotPsdError : Error {
    using Error::Error;
};

/// A function produced a non-finite value where a finite one was required.
struct EvalError : Error {
    using Error::Error;
};

/// Model simulation diverged; carries the offending step index.
struct SimulationError : Error {
    SimulationError(const std::string& what, long at)
        : Error(what + " at step " + std::to_string(at)), step(at) {}
    long step;
};

}  // namespace nlgmp
