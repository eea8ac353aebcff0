#pragma once

#include <stdexcept>
#include <string>

namespace primelab {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct TokenOutOfRange : Error {
    using Error::Error;
};
struct InvalidCode : Error {
    using Error::Error;
};
struct GranularityTooLarge : Error {
    using Error::Error;
};
struct EmptyCounts : Error {
    using Error::Error;
};
struct IncompatibleBases : Error {
    using Error::Error;
};
struct CorruptFile : Error {
    using Error::Error;
};
struct TimeOutOfRange : Error {
    using Error::Error;
};
struct TimeOrderError : Error {
    using Error::Error;
};
struct CarryOverViolation : Error {
    using Error::Error;
};
struct PosteriorShapeError : Error {
    using Error::Error;
};
struct BudgetExceeded : Error {
    using Error::Error;
};
struct RouteMismatch : Error {
    using Error::Error;
};
struct NotNormalized : Error {
    using Error::Error;
};
struct InsufficientData : Error {
    using Error::Error;
};
struct DegenerateFit : Error {
    using Error::Error;
};
struct DivergenceDetected : Error {
    using Error::Error;
};
struct ShapeMismatch : Error {
    using Error::Error;
};
struct NonFinite : Error {
    using Error::Error;
};
struct ZeroMatrix : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

}  // namespace primelab
