#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace cdsynth {

// Failure categories. The numeric value doubles as the process exit code when
// an error escapes to the command-line driver.
enum class ErrorKind {
    config = 2,    // bad configuration or arguments
    data = 3,      // malformed or inconsistent input data
    endpoint = 4,  // remote endpoint unreachable or misbehaving
    invariant = 5, // a verification gate failed
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::endpoint: return "endpoint";
    case ErrorKind::invariant: return "invariant";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string msg)
        : std::runtime_error(std::move(msg)), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, std::string msg) {
    throw Error(kind, std::move(msg));
}

[[noreturn]] inline void fail_config(std::string msg) { fail(ErrorKind::config, std::move(msg)); }
[[noreturn]] inline void fail_data(std::string msg) { fail(ErrorKind::data, std::move(msg)); }
[[noreturn]] inline void fail_endpoint(std::string msg) { fail(ErrorKind::endpoint, std::move(msg)); }
[[noreturn]] inline void fail_invariant(std::string msg) { fail(ErrorKind::invariant, std::move(msg)); }

// Precondition helper: raises a config error when `cond` does not hold.
inline void require(bool cond, ErrorKind kind, const char* msg) {
    if (!cond) fail(kind, msg);
}

} // namespace cdsynth
