#pragma once

#include <stdexcept>
#include <string>

namespace tagasc {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: ConfigError/DimensionError -> 2, ParseError/DataError -> 3,
// anything else -> 1.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or dimension disagreement between tensors/layers.
struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration (bad flag combination, impossible architecture).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed input file; message carries a byte offset or line number.
struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

// Dataset-level problem: missing tag, degenerate class, train/test overlap.
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

}  // namespace tagasc
