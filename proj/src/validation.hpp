#pragma once

#include <string>
#include <vector>

#include "config.hpp"

namespace sofrcev::validation {

struct Check {
  std::string name;
  bool pass = false;
  double value = 0.0;      // measured quantity
  double tolerance = 0.0;  // documented bound on the value
  std::string detail;
};

struct Report {
  bool pass = false;
  std::vector<Check> checks;
  std::string to_json() const;
};

// Oracle cross-checks and scheme invariants at the configured sizes. A check
// that throws is reported as failed with the error text; the suite itself
// always returns.
Report run_suite(const config::RunConfig& cfg);

}  // namespace sofrcev::validation
