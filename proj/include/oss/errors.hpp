#pragma once

#include <stdexcept>
#include <string>

namespace oss {

// Error hierarchy shared by all modules. The CLI maps these to exit codes:
// usage errors -> 1, data/format errors -> 2, numeric failures -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ArgumentError : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

struct SizeError : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct CapabilityError : Error {
    using Error::Error;
};

}  // namespace oss
