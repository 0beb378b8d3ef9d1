#pragma once

#include <stdexcept>
#include <string>

namespace lvg {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/layer dimension mismatches.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid configuration values or unknown keys.
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite losses/gradients during optimization.
struct TrainingError : Error {
  using Error::Error;
};

// Non-finite state while sampling.
struct SamplingError : Error {
  using Error::Error;
};

// Unknown speaker id / content code.
struct LookupError : Error {
  using Error::Error;
};

// File format or filesystem failures.
struct IoError : Error {
  using Error::Error;
};

}  // namespace lvg
