#pragma once

#include <stdexcept>
#include <string>

namespace hurpipe {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tile file is not a HURT file at all.
struct FormatError : Error {
    using Error::Error;
};

// Tile file claims a format version this build does not understand.
struct VersionError : Error {
    using Error::Error;
};

// Tile file is recognized but the payload is damaged or truncated.
struct CorruptionError : Error {
    using Error::Error;
};

// Grid/raster dimensions do not line up.
struct ShapeError : Error {
    using Error::Error;
};

// A parameter or configuration value is invalid.
struct ConfigError : Error {
    using Error::Error;
};

// Input data carries values outside their documented domain.
struct DataError : Error {
    using Error::Error;
};

// A raster or table does not cover something it is required to cover.
struct CoverageError : Error {
    using Error::Error;
};

// An operation that needs at least one scored element received none.
struct EmptyInputError : Error {
    using Error::Error;
};

// A class weighting strategy cannot produce a usable weight for a class.
struct DegenerateClassError : Error {
    using Error::Error;
};

// Training produced a non-finite loss.
struct DivergenceError : Error {
    using Error::Error;
};

// A plugged-in callable violated its documented contract.
struct ContractError : Error {
    using Error::Error;
};

// A country was scored by a model that saw it during training.
struct LeakageError : Error {
    using Error::Error;
};

// A config document failed schema validation.
struct ValidationError : Error {
    using Error::Error;
};

// No human-settlement pixel exists in a cluster's search radius.
struct NoSettlementError : Error {
    using Error::Error;
};

} // namespace hurpipe
