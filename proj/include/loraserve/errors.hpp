#pragma once

#include <stdexcept>
#include <string>

namespace loraserve {

// Expected failure modes get their own types so callers can react to the
// category without parsing messages.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LookupError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when a fixed memory budget cannot hold the requested adapter set.
struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised by Engine::submit when the request cannot be accepted.
struct RejectedError : std::runtime_error {
    enum class Reason { Shutdown, Saturated };

    RejectedError(Reason r, const std::string & msg) : std::runtime_error(msg), reason(r) {}

    Reason reason;
};

}  // namespace loraserve
