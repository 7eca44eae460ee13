#pragma once

#include <stdexcept>
#include <string>

namespace lifelong {

// Error taxonomy. Every failure mode maps to one of these so callers (and the
// CLI exit-code mapping) can distinguish bad input from bad math.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension disagreement between operands.
struct DimensionError : Error {
    using Error::Error;
};

// Math domain violation (log of non-positive, etc.).
struct DomainError : Error {
    using Error::Error;
};

// Index out of range (class targets, task ids in tensors).
struct IndexError : Error {
    using Error::Error;
};

// API contract misuse (non-scalar backward, finalize before step, ...).
struct ContractError : Error {
    using Error::Error;
};

// State machine misuse (incomplete accuracy row, finalize with no steps).
struct StateError : Error {
    using Error::Error;
};

// Anchor snapshot does not align with the current parameter set.
struct AnchorError : Error {
    using Error::Error;
};

// Invalid or inconsistent configuration.
struct ConfigError : Error {
    using Error::Error;
};

// NaN/Inf detected in values or gradients.
struct NumericError : Error {
    using Error::Error;
};

// Malformed input file (CSV/IDX).
struct ParseError : Error {
    using Error::Error;
};

// Empty or otherwise unusable input data.
struct InputError : Error {
    using Error::Error;
};

// Unknown task id or missing branch.
struct LookupError : Error {
    using Error::Error;
};

}  // namespace lifelong
