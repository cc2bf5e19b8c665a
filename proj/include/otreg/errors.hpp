#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace otreg {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A radius or point outside the region a grid can represent.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Caller combined arguments in an unsupported way (mismatched grids, too few slices).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Parameters or data violate a documented precondition.
class InputError : public Error {
public:
    using Error::Error;
};

/// Problem exceeds what an exact method accepts; the message names the alternative.
class CapacityError : public Error {
public:
    using Error::Error;
};

/// Iterative method stopped before reaching its tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double residual, std::vector<double> history = {})
        : Error(what + " (residual " + std::to_string(residual) + ")"),
          residual_(residual), history_(std::move(history)) {}

    double residual() const { return residual_; }
    const std::vector<double>& history() const { return history_; }

private:
    double residual_;
    std::vector<double> history_;
};

/// Stencil or ball leaves the region where a field is defined.
class GeometryError : public Error {
public:
    using Error::Error;
};

/// A smallness gate failed; carries the measured left-hand side.
class PreconditionError : public Error {
public:
    PreconditionError(const std::string& what, double measured)
        : Error(what + " (measured " + std::to_string(measured) + ")"), measured_(measured) {}
    double measured() const { return measured_; }

private:
    double measured_;
};

/// Construction parameters violate their own invariants.
class SpecError : public Error {
public:
    using Error::Error;
};

} // namespace otreg
