#pragma once

#include <stdexcept>
#include <string>

namespace lss {

// Error taxonomy used across the library. Each maps to a distinct CLI exit
// code so scripted callers can tell validation problems from IO problems.

struct invalid_argument_error : std::invalid_argument {
    explicit invalid_argument_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// Input is structurally valid but mathematically unusable (zero vector etc).
struct degenerate_input_error : std::runtime_error {
    explicit degenerate_input_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct numerical_failure_error : std::runtime_error {
    explicit numerical_failure_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed file content (bad syntax, truncation, checksum mismatch).
struct parse_error : std::runtime_error {
    explicit parse_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally parseable but violates the format contract (magic, dims).
struct format_error : std::runtime_error {
    explicit format_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct generation_failure_error : std::runtime_error {
    explicit generation_failure_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lss
