#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace wflow {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Mismatched sizes or dimensions between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A value outside its admissible range (kernel exponent, step size, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Malformed input file. `offset` is the byte (or line, for text formats) where parsing failed.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Two particles share a position where the particle flow needs them distinct.
class CoincidentParticles : public Error {
public:
    CoincidentParticles(std::size_t i, std::size_t j)
        : Error("particles " + std::to_string(i) + " and " + std::to_string(j) +
                " coincide; the particle flow requires pairwise distinct particles"),
          first_(i), second_(j) {}

    std::size_t first() const noexcept { return first_; }
    std::size_t second() const noexcept { return second_; }

private:
    std::size_t first_;
    std::size_t second_;
};

/// The directional derivative is unbounded below, so no steepest descent direction exists.
class SteepestDescentUndefined : public Error {
public:
    using Error::Error;
};

/// Configuration problems, collected before any computation starts.
class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<std::string> problems)
        : Error(join(problems)), problems_(std::move(problems)) {}

    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    static std::string join(const std::vector<std::string>& items) {
        std::string out = "invalid configuration:";
        for (const auto& item : items) out += "\n  - " + item;
        return out;
    }

    std::vector<std::string> problems_;
};

/// A flow step failed; carries the simulation time at which it happened.
class StepError : public Error {
public:
    StepError(double time, const std::string& what)
        : Error("step starting at t=" + std::to_string(time) + " failed: " + what), time_(time) {}

    double time() const noexcept { return time_; }

private:
    double time_;
};

}  // namespace wflow
