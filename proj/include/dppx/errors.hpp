#pragma once

#include <stdexcept>
#include <string>

namespace dppx {

// All library failures derive from Error so callers can catch one type.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shapes or lengths that do not line up.
struct DimensionError : Error {
    using Error::Error;
};

// A scalar argument outside its mathematical domain (p, q, gamma, ...).
struct DomainError : Error {
    using Error::Error;
};

// A required input is missing or inconsistent with the call.
struct PreconditionError : Error {
    using Error::Error;
};

// Base and fine-tuned (or base and delta) checkpoints do not belong together.
struct IncompatibleCheckpoints : Error {
    using Error::Error;
};

// Bad magic, bad version, truncation or malformed CSR on read.
struct CorruptContainer : Error {
    using Error::Error;
};

// Non-finite values produced during training or optimisation.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace dppx
