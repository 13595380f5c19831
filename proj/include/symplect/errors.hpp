#pragma once

#include <stdexcept>
#include <string>

namespace symplect {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid user-facing configuration (bad dims, unknown names, bad flags).
struct ConfigError : Error {
  using Error::Error;
};

/// A caller violated a function precondition.
struct ContractError : Error {
  using Error::Error;
};

/// Two gravitating bodies closer than the singularity guard.
struct SingularityError : Error {
  using Error::Error;
};

struct SamplerError : Error {
  using Error::Error;
};

struct PrecisionError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

/// Non-finite stage value inside an integrator step.
struct DivergenceError : Error {
  DivergenceError(const std::string& what, int stage)
      : Error(what + " (stage " + std::to_string(stage) + ")"), stage(stage) {}
  int stage;
};

/// Non-finite gradients or losses during optimisation. `layer` is -1 when
/// the failure is not attributable to a single parameter block.
struct TrainingError : Error {
  TrainingError(const std::string& what, int layer)
      : Error(what + (layer >= 0 ? " (layer " + std::to_string(layer) + ")" : std::string())),
        layer(layer) {}
  int layer;
};

}  // namespace symplect
