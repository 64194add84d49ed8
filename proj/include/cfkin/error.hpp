#pragma once

#include <stdexcept>
#include <string>

namespace cfkin {

/// Invalid configuration: bad flags, missing columns, infeasible synth specs.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data that cannot support the requested computation.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cfkin
