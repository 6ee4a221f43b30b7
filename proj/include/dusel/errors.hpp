#pragma once

#include <stdexcept>

namespace dusel {

struct ParamError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dusel
