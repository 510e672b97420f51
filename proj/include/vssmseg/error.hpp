#pragma once

#include <stdexcept>
#include <string>

namespace vssmseg {

// Error taxonomy used by every throwing contract in the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mismatched dimensions, bad extents, group mismatches.
struct ShapeError : Error {
    using Error::Error;
};

// Domain violations: delta <= 0, invalid config values, bad CLI arguments.
struct ValueError : Error {
    using Error::Error;
};

// API misuse: non-scalar backward, convolution mode on time-varying params,
// pyramid level relations that contradict the actual sizes.
struct ContractError : Error {
    using Error::Error;
};

// Non-finite values where finiteness is part of the contract.
struct NumericError : Error {
    using Error::Error;
};

// File and binary-container problems.
struct IoError : Error {
    using Error::Error;
};

}  // namespace vssmseg
