#pragma once

#include <stdexcept>
#include <string>

namespace gridalign {

/// Failure categories. They map one-to-one onto CLI exit codes.
enum class ErrorKind {
    invalid_argument,  // bad input shape, violated precondition
    config,            // malformed or unknown configuration
    numeric,           // non-finite values, singular systems
    verification,      // a checked guarantee did not hold
    io,                // unreadable / unwritable files
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(const std::string& what) {
    throw Error(ErrorKind::invalid_argument, what);
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

inline void require(bool ok, const std::string& what) {
    if (!ok) fail(what);
}

inline int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::config:
    case ErrorKind::invalid_argument:
    case ErrorKind::io:
        return 2;
    case ErrorKind::numeric:
        return 3;
    case ErrorKind::verification:
        return 4;
    }
    return 2;
}

}  // namespace gridalign
