#pragma once

#include <memory>
#include <vector>

#include "asian_engine.hpp"  // ExerciseStyle
#include "term_structure.hpp"

namespace sofrcev::bond {

struct ZcbGrid {
  int time_steps = 96;
  int x_nodes = 200;
  double y_max = -1.0;  // <=0: six times the reference level
};

// Zero-coupon bond P(t, maturity) on the transformed half-line, solved by the
// recurrent kernel scheme with the floor lift x_l(tau)/x. Collapses to the
// deterministic discounting integrator when the total variance is too small
// for the grid to resolve the kernel width.
class ZcbSolver {
 public:
  ZcbSolver(const term::ModelSpec& model, double maturity, double t_min, double y_ref,
            ZcbGrid grid = {});
  ~ZcbSolver();
  ZcbSolver(ZcbSolver&&) noexcept;
  ZcbSolver& operator=(ZcbSolver&&) noexcept;

  void solve();
  double value_at(double t, double y) const;
  double maturity() const;

  int levels() const;
  int nodes() const;
  double level_t(int level) const;
  double level_x(int level, int node) const;
  double level_u(int level, int node) const;
  bool delta_mode() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Instantaneous forward rate at a fixed maturity date, from two bond solves
// bumped by +-dq around the maturity.
class ForwardMap {
 public:
  ForwardMap(const term::ModelSpec& model, double maturity, double dq, double t_min,
             double y_ref, ZcbGrid grid = {});
  ~ForwardMap();
  ForwardMap(ForwardMap&&) noexcept;
  ForwardMap& operator=(ForwardMap&&) noexcept;

  double forward(double t, double y) const;
  double forward_dy(double t, double y) const;
  double maturity() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Transition density of y over [t_a, t_b] for the floor-killed diffusion,
// from the kernel representation with a one-cell Gaussian terminal spike per
// target and a boundary-flux history. Falls back to a deterministic point
// mass when the accumulated variance is negligible.
class TransitionDensity {
 public:
  TransitionDensity(const term::ModelSpec& model, double t_a, double t_b, double y_start,
                    int time_steps = 64);
  ~TransitionDensity();
  TransitionDensity(TransitionDensity&&) noexcept;
  TransitionDensity& operator=(TransitionDensity&&) noexcept;

  struct Sample {
    std::vector<double> y;    // target levels at t_b
    std::vector<double> q_y;  // density per unit y
    double mass = 0.0;        // quadrature mass over the targets
    bool point_mass = false;  // degenerate-variance branch
    double y_point = 0.0;     // deterministic arrival level when point_mass
  };

  // n targets covering +-width standard deviations around the deterministic
  // arrival point, clipped at the floor.
  Sample sample(int n, double width = 10.0) const;
  bool degenerate() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct ForwardPutSpec {
  double strike = 0.02;
  double t0 = 0.0;
  double expiry = 0.25;
  double tenor = 0.25;  // forward maturity = expiry + tenor
  double y_spot = 0.03;
  asian::ExerciseStyle style = asian::ExerciseStyle::american;
  double dq = 1.0 / 365.0;
};

struct ForwardPutGrid {
  int time_steps = 40;
  int x_nodes = 160;
  double x_max = -1.0;  // <=0: auto from the strike anchor
};

// Put on the forward rate under the same recurrent kernel scheme. The
// American exercise boundary x_B(tau) is pinned per level by smooth pasting;
// the European variant runs the whole-region form anchored at the floor.
class ForwardPutEngine {
 public:
  ForwardPutEngine(const term::ModelSpec& model, ForwardPutSpec spec,
                   ForwardPutGrid grid = {});
  ~ForwardPutEngine();
  ForwardPutEngine(ForwardPutEngine&&) noexcept;
  ForwardPutEngine& operator=(ForwardPutEngine&&) noexcept;

  void solve();
  double price_at(double y) const;

  // Exercise boundary per tau level, in transformed and original coordinates.
  const std::vector<double>& boundary_x() const;
  std::vector<double> boundary_y() const;
  const std::vector<double>& level_times() const;
  double pasting_residual(int level) const;
  const ForwardMap& forward_map() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sofrcev::bond
