#pragma once

#include <stdexcept>
#include <string>

namespace wavesplit {

// Violated precondition or shape contract of an operation.
class ContractViolation : public std::runtime_error {
 public:
  explicit ContractViolation(const std::string& what) : std::runtime_error(what) {}
};

// Malformed external data (WAV headers, manifests, checkpoints).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values where the numeric contract requires finite ones.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace wavesplit
