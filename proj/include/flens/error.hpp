#pragma once

#include <stdexcept>
#include <string>

namespace flens {

// Error taxonomy used across the toolkit. The CLI maps these onto exit
// codes: ConfigError/InputError -> 2, FormatError/NotFoundError -> 3,
// NumericError -> 4.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid argument values, shape mismatches, out-of-range indices.
class InputError : public Error {
public:
    using Error::Error;
};

// Malformed run configuration (unknown preset, bad field, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Byte-level file format violations (bad magic, truncation, ...).
class FormatError : public Error {
public:
    using Error::Error;
};

// Missing files or directories.
class NotFoundError : public Error {
public:
    using Error::Error;
};

// NaN/Inf escapes, invariant violations, numeric collapse.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace flens
