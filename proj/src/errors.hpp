#pragma once

#include <stdexcept>
#include <string>

namespace sofrcev {

// Thrown when user-supplied model or run parameters violate a documented
// precondition. Maps to exit code 2 at the CLI boundary.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a numerical routine cannot deliver its contract (quadrature
// refusal, failed bracketing, non-finite intermediate). Maps to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sofrcev
