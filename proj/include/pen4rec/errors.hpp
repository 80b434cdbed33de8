#pragma once

#include <stdexcept>
#include <string>

namespace pen4rec {

// Violated precondition or shape contract on an API call.
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Malformed input file (bad header, bad magic, truncation, unparseable field).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite value or other numerical instability.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Dataset-level failure: everything filtered out, empty split partition, vocab mismatch.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pen4rec
