#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tsim {

enum class ErrorKind {
    structural,
    parameter,
    convergence,
    initialization,
    configuration,
    parse,
    validation,
    event,
    linear_solver,
    io,
    internal,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::structural: return "structural";
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::convergence: return "convergence";
    case ErrorKind::initialization: return "initialization";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::parse: return "parse";
    case ErrorKind::validation: return "validation";
    case ErrorKind::event: return "event";
    case ErrorKind::linear_solver: return "linear_solver";
    case ErrorKind::io: return "io";
    case ErrorKind::internal: return "internal";
    }
    return "unknown";
}

/// Base class for every error raised by the library. The kind is stable and
/// is what the CLI prints in its machine-parsable error line.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

template <ErrorKind K>
class KindedError : public Error {
public:
    explicit KindedError(const std::string& what) : Error(K, what) {}
};

using StructuralError = KindedError<ErrorKind::structural>;
using ParameterError = KindedError<ErrorKind::parameter>;
using InitializationError = KindedError<ErrorKind::initialization>;
using ConfigurationError = KindedError<ErrorKind::configuration>;
using ValidationError = KindedError<ErrorKind::validation>;
using EventError = KindedError<ErrorKind::event>;
using LinearSolverError = KindedError<ErrorKind::linear_solver>;
using IoError = KindedError<ErrorKind::io>;
using InternalError = KindedError<ErrorKind::internal>;

class ParseError : public Error {
public:
    ParseError(const std::string& what, int line = -1)
        : Error(ErrorKind::parse, line >= 0 ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}

    int line() const noexcept { return line_; }

private:
    int line_;
};

/// Raised when an iterative solve exhausts its iteration budget.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double final_mismatch)
        : Error(ErrorKind::convergence, what), final_mismatch_(final_mismatch) {}

    double final_mismatch() const noexcept { return final_mismatch_; }

private:
    double final_mismatch_;
};

}  // namespace tsim
