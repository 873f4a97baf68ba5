// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <cstdint>
#include <string>

namespace moelab {

// Error taxonomy shared by every module. The CLI maps ConfigError to exit
// code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numeric parameter is outside its documented domain (k > n, t_fix <= 0...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Malformed data: bad score vector, dimension mismatch, empty sample set.
class InputError : public Error {
 public:
  using Error::Error;
};

// Experiment configuration is invalid (band coverage, placement, schema).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Trace file violates the on-disk format. Message carries the byte offset.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace moelab
