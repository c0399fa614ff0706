#pragma once

#include <stdexcept>

namespace fecil {

/// Malformed file contents (dataset or checkpoint).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration text or values; carries a line/key diagnostic.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fecil
