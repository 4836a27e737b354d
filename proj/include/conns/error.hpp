#pragma once

#include <stdexcept>
#include <string>

namespace conns {

// Base class for every error the library throws. Concrete error types live
// next to the operations that raise them.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoFailure : Error {
    explicit IoFailure(const std::string& msg) : Error("io failure: " + msg) {}
};

struct ShapeMismatch : Error {
    explicit ShapeMismatch(const std::string& detail) : Error("shape mismatch: " + detail) {}
};

}  // namespace conns
