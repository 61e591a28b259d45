// Exception taxonomy shared by all modules. The CLI maps these to exit codes.

#pragma once

#include <stdexcept>
#include <string>

namespace postrl {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration file, invalid override, inconsistent settings.
struct ConfigError : Error {
    using Error::Error;
};

// Caller violated an operation precondition (empty input, bad index, shape mismatch).
struct InvalidInputError : Error {
    using Error::Error;
};

// Non-finite value where a finite one is required (overflowed ratio, NaN gradient).
struct NumericFault : Error {
    using Error::Error;
};

// Malformed or duplicate records while reading an external file.
struct IngestError : Error {
    using Error::Error;
};

// A sampling budget ran out before enough qualifying data was collected.
struct InsufficientDataError : Error {
    using Error::Error;
};

// A checkpoint was offered to a stage it is not a valid parent for.
struct LineageError : Error {
    using Error::Error;
};

// Remote scorer failure in strict mode.
struct ScorerError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace postrl
