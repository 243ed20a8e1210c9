#pragma once

#include <stdexcept>
#include <string>

namespace yyf {

/// Invalid configuration or inputs that cannot be used (CLI exit code 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or incompatible file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Optimizer produced a non-finite loss or gradient.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Density lost all of its mass, or the filter otherwise broke down.
class FilterDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace yyf
