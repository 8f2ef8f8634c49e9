#pragma once

#include <stdexcept>
#include <string>

namespace fsar {

/// Base of every exception thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or an invalid axis.
struct DimensionError : Error {
  using Error::Error;
};

/// Invalid configuration value (bad head count, unknown key, ...).
struct ConfigError : Error {
  using Error::Error;
};

/// A documented precondition of an operation was violated.
struct ContractError : Error {
  using Error::Error;
};

/// Container bytes do not follow the expected layout.
struct FormatError : Error {
  using Error::Error;
};

/// Containers or manifest disagree with each other.
struct IntegrityError : Error {
  using Error::Error;
};

/// Record contents are unusable (non-finite values).
struct DataError : Error {
  using Error::Error;
};

/// Not enough classes or videos to build an episode.
struct SamplingError : Error {
  using Error::Error;
};

/// Non-finite or undefined numeric result.
struct NumericError : Error {
  using Error::Error;
};

/// Unknown identifier.
struct LookupError : Error {
  using Error::Error;
};

}  // namespace fsar
