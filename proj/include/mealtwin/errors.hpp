#pragma once

#include <stdexcept>
#include <string>

namespace mealtwin {

// Malformed or inconsistent configuration (scenario, experiment, plan).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data: CSV logs, transaction files, model documents.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or parameters during learning.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mealtwin
