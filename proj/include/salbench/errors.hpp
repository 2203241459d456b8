#pragma once

#include <stdexcept>
#include <string>

namespace salbench {

// Dimension/shape violations (mismatched operands, invalid output sizes).
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller broke a documented contract (non-binary mask, bad step size, ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid build-time configuration (channel counts, reduction ratios, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input files (index CSV, PNM headers, weight containers).
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem-level failures (missing file, short read, write failure).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace salbench
