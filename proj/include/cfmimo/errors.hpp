#pragma once

#include <stdexcept>
#include <string>

namespace cfmimo {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid scenario, hardware, or solver configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Antenna array with non-positive dimensions or spacing.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an evaluator.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Semi-unitary projection of a rank-deficient matrix.
class DegenerateProjectionError : public Error {
 public:
  using Error::Error;
};

/// All-zero channel where a singular vector is required.
class DegenerateChannelError : public Error {
 public:
  using Error::Error;
};

/// DAC resolution below one bit.
class InvalidResolutionError : public Error {
 public:
  using Error::Error;
};

/// Rank-deficient or hopelessly ill-conditioned effective channel.
class PrecoderSingularError : public Error {
 public:
  using Error::Error;
};

/// Fronthaul rate of a noiseless link carrying a nonzero signal.
class InfiniteRateError : public Error {
 public:
  using Error::Error;
};

/// Solver start point violates the power budget.
class InitializationError : public Error {
 public:
  using Error::Error;
};

/// Root finder or linear solver failed to make progress.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File system failure, annotated with the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cfmimo
