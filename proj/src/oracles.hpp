#pragma once

#include <cstdint>
#include <vector>

#include "asian_engine.hpp"
#include "term_structure.hpp"

namespace sofrcev::oracle {

// Brute-force reference implementations for the validation suite. None of
// these share assembly code with the production engines: the FD and MC
// oracles work in the original (t, y, z) variables, the iterative solver
// re-derives the boundary equations from scratch and shares only the kernel,
// transform, and grid helpers.

// ---- finite differences -----------------------------------------------

// Implicit in y, explicit upwind in z. The time grid grows geometrically
// away from t0 so the 1/(t - t0) advection always satisfies the CFL bound.
struct FdGrid {
  int y_nodes = 201;
  int z_nodes = 111;
  double y_max = -1.0;  // <= 0: drift-adjusted spot plus 8 sigma
  double z_max = -1.0;  // <= 0: 1.05 * max(K, rbar_star + y_max)
  double cfl = 0.8;
  int base_steps = 200;  // cap dt at (T - t0) / base_steps
};

struct FdResult {
  double price = 0.0;
  int time_steps = 0;
  int y_nodes = 0;
  int z_nodes = 0;
};

FdResult fd_asian(const term::ModelSpec& model, const asian::Instrument& inst,
                  asian::KillingForm killing, FdGrid grid = {});

// ---- Monte Carlo (European style only) ----------------------------------

struct McResult {
  double price = 0.0;
  double std_error = 0.0;
  std::uint64_t paths = 0;
  int steps = 0;
  std::uint64_t seed = 0;
};

McResult mc_asian_european(const term::ModelSpec& model, const asian::Instrument& inst,
                           asian::KillingForm killing, std::uint64_t paths, int steps,
                           std::uint64_t seed);

// ---- direct fixed-point solution of the boundary equations --------------

// Solves the coupled boundary/gradient integral equations level by level,
// iterating each level's nonlinear boundary equation to a fixed point
// instead of using the closed-form update. Small grids only: O(N^2 M I).
struct IterativeOptions {
  asian::KillingForm killing = asian::KillingForm::full;
  bool weighted_source_kernel = true;
  bool consistent_lambda = true;
  bool extrapolate_boundary_at_t0 = true;
  bool zero_averaging = false;  // drop the 1/(t - t0) advection entirely
  double tolerance = 1e-8;
  int max_iterations = 100;
};

struct IterativeResult {
  std::vector<double> tau, t, x_l;
  std::vector<std::vector<double>> x, z_b;
  std::vector<double> psi_b;
  // Sup-norm boundary updates per fixed-point sweep at the first level.
  std::vector<double> first_level_residuals;
  int max_iterations_used = 0;
  double price = 0.0;  // at (t0, y_spot, spot average), first-order z sweep
};

IterativeResult livesk_iterative(const term::ModelSpec& model, const asian::Instrument& inst,
                                 const asian::GridSpec& grid, IterativeOptions opts = {});

// Gradient of the killing-free, averaging-free problem from its standalone
// integral equation; the full recurrences must collapse onto it when both
// coefficient fields vanish.
std::vector<double> homogeneous_gradient(const term::ModelSpec& model,
                                         const asian::Instrument& inst, int time_steps,
                                         int x_nodes, double x_max,
                                         bool weighted_source_kernel = true);

// ---- deterministic zero-coupon limit -------------------------------------

// exp(-int_t^Q [rbar_star(s) + y e^{-int_t^s alpha}] ds) by plain dense
// quadrature; arbitrates the sigma -> 0 limit of the bond solver.
double deterministic_zcb(const term::ModelSpec& model, double t, double y, double q_maturity);

}  // namespace sofrcev::oracle
