#pragma once

#include <stdexcept>
#include <string>

namespace kmc {

// Violated input contract: bad dimensions, out-of-range parameters,
// malformed files. Maps to CLI exit code 1.
class InputError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Non-finite values or failed numerics. Maps to CLI exit code 2.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline void require_input(bool cond, const std::string& what) {
  if (!cond) throw InputError(what);
}

inline void require_numeric(bool cond, const std::string& what) {
  if (!cond) throw NumericError(what);
}

}  // namespace kmc
