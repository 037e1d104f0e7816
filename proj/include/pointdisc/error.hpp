#pragma once

#include <stdexcept>
#include <string>

namespace pointdisc {

// Bad arguments or violated preconditions (shape mismatch, m > N, ...).
struct InvalidInputError : std::runtime_error {
    explicit InvalidInputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed text input (OFF meshes, config files); carries a 1-based line number.
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, int line)
        : std::runtime_error(msg + " (line " + std::to_string(line) + ")"), line_number(line) {}
    int line_number;
};

// Malformed binary artifact (.pdsc / .pdck): bad magic, version, truncation.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pointdisc
