#pragma once

#include <stdexcept>
#include <string>

namespace diffplan {

// A required resource is not ready (e.g. sampling from an empty buffer).
class UnavailableError : public std::runtime_error {
 public:
  explicit UnavailableError(const std::string& msg) : std::runtime_error(msg) {}
};

// An optimizer update was refused (non-finite gradients, diverged loss).
class UpdateRejected : public std::runtime_error {
 public:
  explicit UpdateRejected(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller broke an API contract (e.g. stepping a finished episode).
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// Configuration file or key failed validation; carries the offending key.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace diffplan
