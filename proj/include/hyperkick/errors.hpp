#pragma once

#include <stdexcept>
#include <string>

namespace hyperkick {

// Domain-specific failures. Everything derives from Error so callers can
// distinguish library failures from std:: ones; the CLI maps ConfigError
// subclasses to exit code 2 and the rest to exit code 3.

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

// config / input validation
struct ParseError : ConfigError {
  using ConfigError::ConfigError;
};
struct ConstraintViolation : ConfigError {
  using ConfigError::ConfigError;
};

// geometry
struct DegenerateGeometry : Error {
  using Error::Error;
};
struct NearSingularShape : Error {
  using Error::Error;
};

// interaction curves
struct OutOfRange : Error {
  using Error::Error;
};

// basis / channel construction
struct SingularGrid : Error {
  using Error::Error;
};
struct NoConvergence : Error {
  using Error::Error;
};
struct QuadratureMismatch : Error {
  using Error::Error;
};
struct MissingCoupling : Error {
  using Error::Error;
};
struct UnsolvedChannel : Error {
  using Error::Error;
};

// stationary states
struct NoBoundState : Error {
  using Error::Error;
};
struct DeflationFailure : Error {
  using Error::Error;
};
struct NodeDivision : Error {
  using Error::Error;
};

// propagation
struct SpectralBoundsViolated : Error {
  using Error::Error;
};
struct GridMismatch : Error {
  using Error::Error;
};

// observables
struct EmptyScope : Error {
  using Error::Error;
};
struct EmptyBin : Error {
  using Error::Error;
};
struct BinningClipped : Error {
  using Error::Error;
};
struct ZeroDensityStart : Error {
  using Error::Error;
};
struct ZeroEnergy : Error {
  using Error::Error;
};
struct FitUnderdetermined : Error {
  using Error::Error;
};

// reference models
struct TruncationOverflow : Error {
  using Error::Error;
};

// persistence
struct CheckpointIOFailure : Error {
  using Error::Error;
};

}  // namespace hyperkick
