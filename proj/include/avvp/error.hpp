#pragma once

#include <stdexcept>
#include <string>

namespace avvp {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between tensors.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid argument value: out-of-range counts, empty batches, bad variants.
struct ArgumentError : Error {
  using Error::Error;
};

// Malformed on-disk data: feature files, manifests, checkpoints.
struct FormatError : Error {
  using Error::Error;
};

// Checkpoint format version not supported by this build.
struct VersionError : FormatError {
  using FormatError::FormatError;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

// Bad run configuration: unknown keys, unparsable or inconsistent values.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace avvp
