// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <stdexcept>
#include <string>

namespace fedpipe {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree.
struct ShapeError : Error {
    using Error::Error;
};

/// A precondition on an operation argument was violated (bad lambda,
/// unsupported bit width, non-finite input, ...).
struct ParameterError : Error {
    using Error::Error;
};

/// An operation was asked to do something its contract forbids
/// (e.g. differentiate a non-scalar node).
struct ContractError : Error {
    using Error::Error;
};

/// A node reference does not name a leaf recorded on the tape.
struct UnknownLeafError : Error {
    using Error::Error;
};

/// Invalid campaign configuration; the message names the offending field.
struct ConfigError : Error {
    using Error::Error;
};

/// Serialized quantized data is internally inconsistent.
struct CorruptionError : Error {
    using Error::Error;
};

/// A client's memory budget cannot hold the backbone even at 4 bits.
struct InfeasibleMemoryError : Error {
    using Error::Error;
};

}  // namespace fedpipe
