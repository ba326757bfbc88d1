#pragma once

#include <vector>

#include "errors.hpp"

namespace sofrcev::weberorr {

// Cylinder functions of real order; negative orders via the reflection
// identities. Half-integer orders use exact trigonometric forms.
double cyl_j(double nu, double x);
double cyl_y(double nu, double x);
// d/dx J_nu(x) = J_{nu-1}(x) - (nu/x) J_nu(x), same recurrence for Y.
double cyl_j_deriv(double nu, double x);
double cyl_y_deriv(double nu, double x);

// Cross products entering the spectral kernel on [a, inf):
//   W (p, v, a) = J_nu(pv) Y_nu(pa) - Y_nu(pv) J_nu(pa)
//   W'(p, v, a) = p [J_nu'(pv) Y_nu(pa) - Y_nu'(pv) J_nu(pa)]
//   V (p, a)    = J_nu(pa)^2 + Y_nu(pa)^2
double W_kernel(double nu_abs, double p, double v, double a);
double W_kernel_prime(double nu_abs, double p, double v, double a);
double V_norm(double nu_abs, double p, double a);

// Heat kernel of the radial operator u_tau = u_xx/2 + (b/x) u_x on [a, inf)
// with absorption at a, expressed through the continuous spectral density:
//   Theta(tau,v,w,a) = int_0^inf exp(-p^2 tau/2) W(p,v,a) W(p,w,a) / V(p,a) p dp
// For |nu| = 1/2 the integral collapses to a method-of-images Gaussian pair
// and is evaluated in closed form for any tau > 0. General orders dispatch on
// the argument regime: once the image term is beyond Gaussian reach the
// integral equals the free Bessel heat kernel exactly (Hankel identity, one
// scaled-I_nu evaluation); near a floor lying many widths from the origin the
// image with its leading Bessel phase shift is subtracted; only the remaining
// near-origin regime runs the panel quadrature, which refuses tau below
// tau_min() (callers then take the tau -> 0 delta limit instead,
// Theta -> (vw)^{-1/2} [delta(v-w) - delta(v+w-2a)]).
class ThetaKernel {
 public:
  explicit ThetaKernel(double nu_abs);

  double nu_abs() const { return nu_abs_; }
  bool closed_form() const { return closed_form_; }
  static constexpr double tau_min() { return 1e-6; }

  double theta(double tau, double v, double w, double a) const;
  // dTheta/dv; all solver uses have v = a (gradients live on the boundary),
  // but the general point is supported.
  double theta_prime(double tau, double v, double w, double a) const;

  // Row evaluation sharing the p-grid across abscissae; significant speedup
  // for the general-order path, exact same values as pointwise calls.
  void theta_row(double tau, double v, const std::vector<double>& w, double a,
                 std::vector<double>& out) const;
  void theta_prime_row(double tau, double v, const std::vector<double>& w, double a,
                       std::vector<double>& out) const;

 private:
  double tiered(double tau, double v, double w, double a, bool prime) const;
  void row_impl(double tau, double v, const std::vector<double>& w, double a, bool prime,
                std::vector<double>& out) const;
  double quad_row_impl(double tau, double v, const double* w, std::size_t n, double a,
                       bool prime, double* out) const;
  double nu_abs_;
  bool closed_form_;
};

// Action of the tau -> 0 limit of Theta on a function known at v: the sifted
// value g(v)/v for v strictly above the boundary, zero exactly at v = a.
double delta_action(double g_at_v, double v, double a);

}  // namespace sofrcev::weberorr
