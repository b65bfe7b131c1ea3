#pragma once

#include <stdexcept>
#include <string>

namespace fishcore {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration (bad level counts, non-positive sizes, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Tensor/channel shape does not satisfy an operation's contract.
struct ShapeError : Error {
    using Error::Error;
};

// Values violate a value-level contract (out-of-range index, non-finite input).
struct DomainError : Error {
    using Error::Error;
};

// Well-shaped container holding inconsistent data (index beyond codebook, ...).
struct DataError : Error {
    using Error::Error;
};

// Malformed serialized bytes: bad magic, bad version, corrupt record.
struct FormatError : Error {
    using Error::Error;
};

// Serialized payload shorter or longer than its declared size.
struct LengthError : Error {
    using Error::Error;
};

// Fixed-capacity buffer (e.g. a KV cache) would overflow.
struct CapacityError : Error {
    using Error::Error;
};

// Training-loop failure; message carries the offending parameter path.
struct TrainError : Error {
    using Error::Error;
};

} // namespace fishcore
