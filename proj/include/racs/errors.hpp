#pragma once
// Exception taxonomy shared across the library. The CLI maps these onto
// distinct exit codes (config=2, data=3, numeric=4).

#include <stdexcept>

namespace racs {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or bound mismatch between tensors/layers.
struct DimensionError : Error { using Error::Error; };

// Non-finite values, singular systems, training divergence.
struct NumericError : Error { using Error::Error; };

// API misuse: stale tape, missing gradient for an unfrozen tensor.
struct ContractError : Error { using Error::Error; };

// Invalid run configuration (bad keys, impossible combinations).
struct ConfigError : Error { using Error::Error; };

// File formats, datasets, checkpoint version/corruption.
struct DataError : Error { using Error::Error; };

}  // namespace racs
