#pragma once

#include <stdexcept>
#include <string>

namespace mmt {

// Invalid configuration values or preconditions on user-supplied settings.
// The CLI maps this family to exit code 1.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input/output artifact is missing or malformed (also exit code 1).
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MiningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ClusterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mmt
