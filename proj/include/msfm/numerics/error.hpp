#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace msfm {

// Caller broke a documented precondition (shape rule, argument range, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A forward operation produced NaN or Inf.
class NumericFault : public std::runtime_error {
 public:
  NumericFault(std::string op, std::uint64_t node_id)
      : std::runtime_error("non-finite output in op '" + op + "' (node " + std::to_string(node_id) + ")"),
        op_(std::move(op)),
        node_id_(node_id) {}

  const std::string& op() const noexcept { return op_; }
  std::uint64_t node_id() const noexcept { return node_id_; }

 private:
  std::string op_;
  std::uint64_t node_id_;
};

// Malformed, truncated, corrupted or incompatible file content.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Serialized state written by an incompatible format version.
class VersionMismatch : public DataError {
 public:
  using DataError::DataError;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace msfm
