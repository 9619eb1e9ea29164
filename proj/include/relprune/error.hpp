#pragma once

#include <stdexcept>
#include <string>

namespace relprune {

// File and serialization failures (missing files, bad magic, truncation).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values where finite ones are required (diverged training,
// NaN/Inf activations).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace relprune
