#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace isc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor dimensions do not conform.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A scalar argument lies outside its admissible range.
class RangeError : public Error {
public:
    using Error::Error;
};

/// Index (e.g. a class label) out of bounds.
class IndexError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Dataset content cannot satisfy a request (too few samples, missing subject, ...).
class DataError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed binary file. Carries the byte offset at which decoding failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

}  // namespace isc
