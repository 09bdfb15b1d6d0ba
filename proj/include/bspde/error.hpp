#pragma once

#include <stdexcept>
#include <string>

namespace bspde {

/// Base of every error raised by the library. `module()` names the component
/// that raised it so the CLI can report "module: message".
class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& what)
        : std::runtime_error(what), module_(std::move(module)) {}

    const std::string& module() const noexcept { return module_; }

private:
    std::string module_;
};

/// Invalid user configuration (bad invariant, unknown key, malformed expression).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Grid too coarse for the requested derivative order.
class ResolutionError : public Error {
public:
    using Error::Error;
};

/// Caller broke a documented precondition (e.g. missing derivative cache).
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Operator produced a non-finite value.
class OperatorError : public Error {
public:
    using Error::Error;
};

/// Iteration produced non-finite values.
class DivergedError : public Error {
public:
    using Error::Error;
};

/// Division by a vanishing second derivative (loss of concavity).
class SingularityError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of a formula.
class DomainError : public Error {
public:
    using Error::Error;
};

/// A path left the hull of the grid it is interpolated on.
class ExtrapolationError : public Error {
public:
    using Error::Error;
};

}  // namespace bspde
