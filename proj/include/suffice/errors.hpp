#pragma once

#include <stdexcept>
#include <string>

namespace suffice {

/// Raised when an argument violates a documented precondition.
class InvalidInput : public std::invalid_argument {
public:
    explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
    InvalidInput(const std::string& field, const std::string& what)
        : std::invalid_argument(field + ": " + what), field_(field) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// A demonstrator or query pool has nothing left to give.
class StreamExhausted : public std::runtime_error {
public:
    explicit StreamExhausted(const std::string& what) : std::runtime_error(what) {}
};

/// Operation refused because of the current state of a session.
class Conflict : public std::runtime_error {
public:
    explicit Conflict(const std::string& what) : std::runtime_error(what) {}
};

class NotFound : public std::runtime_error {
public:
    explicit NotFound(const std::string& what) : std::runtime_error(what) {}
};

class PreconditionFailed : public std::runtime_error {
public:
    explicit PreconditionFailed(const std::string& what) : std::runtime_error(what) {}
};

} // namespace suffice
