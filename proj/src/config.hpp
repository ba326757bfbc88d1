#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asian_engine.hpp"
#include "term_structure.hpp"

namespace sofrcev::config {

// Validation-suite knobs carried alongside the pricing setup.
struct OracleConfig {
  bool fd = true;
  bool mc = true;
  bool iterative = true;
  bool zcb = true;
  std::uint64_t mc_paths = 200000;
  int mc_steps = 128;
  std::uint64_t seed = 12345;
  int fd_y_nodes = 201;
  int fd_z_nodes = 111;
  int iter_time_steps = 8;
  int iter_x_nodes = 24;
  int iter_z_nodes = 6;
};

// One run of the pricing front end. Defaults reproduce the reference test
// setup: beta = -1, sigma = 0.2 * y_spot, rbar_star = -0.01, alpha = -0.1,
// T = 0.25, y_spot = 100, x_max = 1000, 40x200x10 grid, strikes
// {90, 95, 100, 105, 110, 120}.
struct RunConfig {
  term::ModelSpec model;
  asian::Instrument contract;  // strike field is replaced per entry of `strikes`
  std::vector<double> strikes{90.0, 95.0, 100.0, 105.0, 110.0, 120.0};
  double tenor = 0.25;       // futures accrual window length
  double q_maturity = 0.5;   // bond maturity for zcb/forward queries
  asian::GridSpec grid;
  asian::SchemeOptions scheme;
  std::string output_directory = "out";
  std::string output_formats = "csv";
  OracleConfig oracle;
};

RunConfig default_config();

// Curve syntax: a bare number is a constant; "t0:v0, t1:v1, ..." is piecewise
// constant from each breakpoint on; a "linear" prefix interpolates between
// the knots instead.
term::ParamCurve parse_curve(const std::string& text);

// Key-grouped text config:
//   [section]
//   key = value      # comment
// Unknown sections or keys are configuration errors, as are malformed values.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

}  // namespace sofrcev::config
