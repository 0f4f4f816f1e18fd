#pragma once

#include <stdexcept>
#include <string>

namespace remax {

// Violated precondition: wrong dimensions, stale tapes, misuse of an API.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A loss or gradient went non-finite during training.
class DivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File could not be read, written or parsed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

}  // namespace remax
