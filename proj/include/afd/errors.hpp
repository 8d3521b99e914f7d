#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace afd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or extents.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value or unparseable spec string.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Dataset content violates an invariant (e.g. label out of range).
class DataError : public Error {
public:
    using Error::Error;
};

/// Operation requested in a state that cannot serve it.
class StateError : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. backward() on a non-scalar.
class UsageError : public Error {
public:
    using Error::Error;
};

/// An input fell outside the documented value range of an operation.
class ContractError : public Error {
public:
    using Error::Error;
};

/// A NaN or infinity appeared in a computed value.
class NumericError : public Error {
public:
    using Error::Error;
};

/// File-level I/O failure; the message carries the path.
class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed binary file. Carries the byte offset where parsing failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

}  // namespace afd
