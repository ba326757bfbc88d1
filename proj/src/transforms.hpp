#pragma once

#include "interp.hpp"
#include "term_structure.hpp"

namespace sofrcev::transforms {

// Deterministic change of variables that maps the pricing PDE onto the
// canonical radial diffusion u_tau = u_xx/2 + (b/x) u_x on a half line.
//
// With maturity anchor T:
//   phi(t) = int_t^T sigma^2(k) dk          (phi(T) = 0, decreasing in t)
//   F(t)   = exp(beta * int_t^T alpha)      (F at phi = 0 equals 1)
//   tau(t) = int_t^T F^2(k) sigma^2(k) dk   (tau(T) = 0, increasing backward)
//   chi(y) = -(1/beta) y^(-beta),  x = chi * F(t)
// Exponents of the radial operator: nu = 1/(2 beta), b = (1 + beta)/(2 beta).
class TransformCache {
 public:
  TransformCache(const term::ModelSpec& model, double maturity, double t_min);

  double maturity() const { return maturity_; }
  double t_min() const { return t_min_; }
  double nu() const { return nu_; }
  double nu_abs() const { return std::abs(nu_); }
  double b() const { return b_; }
  double beta() const { return beta_; }

  double phi_of_t(double t) const;
  double F_of_t(double t) const;
  double tau_of_t(double t) const;
  double t_of_phi(double phi) const;
  double t_of_tau(double tau) const;
  double tau_total() const { return tau_total_; }

  double chi_of_y(double y) const;
  double y_of_chi(double chi) const;
  double x_of_y(double y, double t) const;
  double y_of_x(double x, double t) const;

  double x_l_of_t(double t) const;
  double x_l_of_tau(double tau) const;
  // Analytic d x_l / d tau via the chain rule (no finite differences).
  double dxl_dtau_at_t(double t) const;
  double max_x_l() const { return max_x_l_; }

 private:
  const term::ModelSpec* model_;
  double maturity_, t_min_;
  double beta_, nu_, b_;
  double tau_total_ = 0.0;
  double max_x_l_ = 0.0;
  interp::MonotoneCubic t_from_phi_, t_from_tau_;
};

}  // namespace sofrcev::transforms
