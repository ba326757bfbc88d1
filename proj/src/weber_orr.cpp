#include "weber_orr.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_sf_bessel.h>

#include <array>
#include <cmath>
#include <mutex>

namespace sofrcev::weberorr {

namespace {

void disable_gsl_abort() {
  static std::once_flag flag;
  std::call_once(flag, [] { gsl_set_error_handler_off(); });
}

bool is_half_odd_integer(double nu) {
  const double two = 2.0 * nu;
  return std::abs(two - std::round(two)) < 1e-14 &&
         std::llround(std::abs(two)) % 2 == 1;
}

// J/Y for half-odd orders from the trigonometric seeds via the standard
// three-term recurrence; orders used by the solver stay small, where the
// recurrence is benign.
double half_integer_jy(double nu, double x, bool want_j) {
  const double s = std::sqrt(2.0 / (M_PI * x));
  const double sinx = std::sin(x), cosx = std::cos(x);
  // seeds at order -1/2 and +1/2
  double jm = s * cosx, jp = s * sinx;   // J_{-1/2}, J_{1/2}
  double ym = s * sinx, yp = -s * cosx;  // Y_{-1/2}, Y_{1/2}
  if (nu >= 0.5) {
    double ord = 0.5;
    double a0 = want_j ? jm : ym, a1 = want_j ? jp : yp;
    while (ord < nu - 0.25) {
      const double a2 = (2.0 * ord / x) * a1 - a0;
      a0 = a1;
      a1 = a2;
      ord += 1.0;
    }
    return a1;
  }
  double ord = -0.5;
  double a1 = want_j ? jm : ym, a0 = want_j ? jp : yp;  // a0 at ord+1
  while (ord > nu + 0.25) {
    const double am = (2.0 * ord / x) * a1 - a0;
    a0 = a1;
    a1 = am;
    ord -= 1.0;
  }
  return a1;
}

}  // namespace

double cyl_j(double nu, double x) {
  disable_gsl_abort();
  if (!(x > 0.0)) throw NumericalError("cyl_j requires x > 0");
  if (is_half_odd_integer(nu)) return half_integer_jy(nu, x, true);
  if (nu < 0.0) {
    const double mu = -nu;
    return std::cos(M_PI * mu) * cyl_j(mu, x) - std::sin(M_PI * mu) * cyl_y(mu, x);
  }
  gsl_sf_result r;
  if (gsl_sf_bessel_Jnu_e(nu, x, &r) != GSL_SUCCESS)
    throw NumericalError("bessel J evaluation failed");
  return r.val;
}

double cyl_y(double nu, double x) {
  disable_gsl_abort();
  if (!(x > 0.0)) throw NumericalError("cyl_y requires x > 0");
  if (is_half_odd_integer(nu)) return half_integer_jy(nu, x, false);
  if (nu < 0.0) {
    const double mu = -nu;
    return std::sin(M_PI * mu) * cyl_j(mu, x) + std::cos(M_PI * mu) * cyl_y(mu, x);
  }
  gsl_sf_result r;
  if (gsl_sf_bessel_Ynu_e(nu, x, &r) != GSL_SUCCESS)
    throw NumericalError("bessel Y evaluation failed");
  return r.val;
}

double cyl_j_deriv(double nu, double x) { return cyl_j(nu - 1.0, x) - (nu / x) * cyl_j(nu, x); }

double cyl_y_deriv(double nu, double x) { return cyl_y(nu - 1.0, x) - (nu / x) * cyl_y(nu, x); }

double W_kernel(double nu_abs, double p, double v, double a) {
  return cyl_j(nu_abs, p * v) * cyl_y(nu_abs, p * a) -
         cyl_y(nu_abs, p * v) * cyl_j(nu_abs, p * a);
}

double W_kernel_prime(double nu_abs, double p, double v, double a) {
  return p * (cyl_j_deriv(nu_abs, p * v) * cyl_y(nu_abs, p * a) -
              cyl_y_deriv(nu_abs, p * v) * cyl_j(nu_abs, p * a));
}

double V_norm(double nu_abs, double p, double a) {
  const double j = cyl_j(nu_abs, p * a), y = cyl_y(nu_abs, p * a);
  return j * j + y * y;
}

ThetaKernel::ThetaKernel(double nu_abs) : nu_abs_(nu_abs) {
  if (!(nu_abs >= 0.5)) throw ConfigError("theta kernel needs |nu| >= 1/2");
  closed_form_ = std::abs(nu_abs - 0.5) < 1e-14;
}

namespace {

struct GL16 {
  std::array<double, 16> x, w;
  GL16() {
    constexpr int n = 16;
    for (int i = 0; i < n; ++i) {
      double t = std::cos(M_PI * (i + 0.75) / (n + 0.5));
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = t;
        for (int k = 2; k <= n; ++k) {
          const double p2 = ((2 * k - 1) * t * p1 - (k - 1) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        const double dp = n * (t * p1 - p0) / (t * t - 1.0);
        const double dt = p1 / dp;
        t -= dt;
        if (std::abs(dt) < 1e-16) {
          x[i] = t;
          w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
          break;
        }
      }
    }
  }
};

const GL16& gl16() {
  static const GL16 rule;
  return rule;
}

double closed_theta(double tau, double v, double w, double a) {
  const double g = 1.0 / std::sqrt(v * w) / std::sqrt(2.0 * M_PI * tau);
  const double d1 = v - w, d2 = v + w - 2.0 * a;
  return g * (std::exp(-d1 * d1 / (2.0 * tau)) - std::exp(-d2 * d2 / (2.0 * tau)));
}

double closed_theta_prime(double tau, double v, double w, double a) {
  const double g = 1.0 / std::sqrt(v * w) / std::sqrt(2.0 * M_PI * tau);
  const double d1 = v - w, d2 = v + w - 2.0 * a;
  const double e1 = std::exp(-d1 * d1 / (2.0 * tau));
  const double e2 = std::exp(-d2 * d2 / (2.0 * tau));
  return -0.5 / v * g * (e1 - e2) + g * (-d1 * e1 + d2 * e2) / tau;
}

// ---- analytic regimes for general order ----------------------------------

// Which evaluation route a (tau, v, w, a) tuple takes. The direct and image
// Gaussian exponents decide: with both beyond double range the kernel is
// zero; with the image negligible relative to the direct term the kernel
// equals the free Bessel heat kernel exactly (the a-dependent spectral
// phases cancel in the difference phase); with the floor many widths from
// the origin (a >> sqrt(tau)) the image Gaussian with the leading O(1/pa)
// spectral phase shift is subtracted. Only the near-origin leftover needs
// the defining integral.
enum class Tier { dead, free_exact, near_floor, quadrature };

struct Split {
  Tier tier;
  double e1;  // (v - w)^2 / (2 tau)
  double d2;  // v + w - 2a
  double e2;  // d2^2 / (2 tau)
};

Split classify(double tau, double v, double w, double a, double mu) {
  Split s;
  const double d1 = v - w;
  s.e1 = d1 * d1 / (2.0 * tau);
  s.d2 = (v - a) + (w - a);
  s.e2 = s.d2 * s.d2 / (2.0 * tau);
  const double cross2 = 2.0 * (v - a) * (w - a) / tau;  // e2 - e1
  if (s.e1 > 700.0 && s.e2 > 700.0)
    s.tier = Tier::dead;
  else if (cross2 > 80.0)
    s.tier = Tier::free_exact;
  else if (a * a > 100.0 * tau && std::abs(mu - 1.0) * std::sqrt(tau) < 0.24 * a)
    s.tier = Tier::near_floor;
  else
    s.tier = Tier::quadrature;
  return s;
}

double inu_scaled(double nu, double z) {
  disable_gsl_abort();
  gsl_sf_result r;
  if (gsl_sf_bessel_Inu_scaled_e(nu, z, &r) != GSL_SUCCESS)
    throw NumericalError("scaled bessel I evaluation failed");
  return r.val;
}

// Free-space kernel int_0^inf exp(-p^2 tau/2) J_nu(pv) J_nu(pw) p dp in its
// I_nu form, with the exponential written against the difference coordinate
// so no unscaled Bessel value ever appears.
double free_theta(double nu, double tau, double v, double w, const Split& s) {
  if (s.e1 > 700.0) return 0.0;
  return std::exp(-s.e1) * inu_scaled(nu, v * w / tau) / tau;
}

double free_theta_prime(double nu, double tau, double v, double w, const Split& s) {
  if (s.e1 > 700.0) return 0.0;
  const double z = v * w / tau;
  const double i0 = inu_scaled(nu, z), i1 = inu_scaled(nu + 1.0, z);
  // d/dv, using I_nu'(z) = I_{nu+1}(z) + (nu/z) I_nu(z).
  return std::exp(-s.e1) * (w * i1 + (nu * tau / v - v) * i0) / (tau * tau);
}

// Image term for a floor far from the origin: the reflected Gaussian with
// the flat (|nu| = 1/2) prefactor. The spectral phase shift it neglects is
// O((4 nu^2 - 1) sqrt(tau) / a); the tier gate keeps that small.
double floor_image(double tau, double v, double w, const Split& s) {
  if (s.e2 > 700.0) return 0.0;
  const double g = std::exp(-s.e2) / std::sqrt(2.0 * M_PI * tau);
  return g / std::sqrt(v * w);
}

double floor_image_prime(double tau, double v, double w, const Split& s) {
  if (s.e2 > 700.0) return 0.0;
  const double g = std::exp(-s.e2) / std::sqrt(2.0 * M_PI * tau);
  // d/dv of (vw)^{-1/2} g(d2).
  return (-0.5 / v - s.d2 / tau) * g / std::sqrt(v * w);
}

}  // namespace

double ThetaKernel::quad_row_impl(double tau, double v, const double* w, std::size_t n,
                                  double a, bool prime, double* out) const {
  if (tau < tau_min())
    throw NumericalError("theta quadrature refused below tau_min; use the delta limit");
  // exp(-p^2 tau / 2) < 1e-16 beyond p_max.
  const double p_max = std::sqrt(2.0 * 37.0 / tau);
  double scale_max = std::max(v, a);
  for (std::size_t i = 0; i < n; ++i) scale_max = std::max(scale_max, w[i]);
  // Panel narrow enough to resolve both the kernel oscillation (fastest mode
  // has wavelength 2 pi / scale) and the Gaussian decay profile.
  const double h = std::min(M_PI / scale_max, p_max / 8.0);
  const int panels = static_cast<int>(std::ceil(p_max / h));
  const auto& rule = gl16();

  for (std::size_t i = 0; i < n; ++i) out[i] = 0.0;
  for (int k = 0; k < panels; ++k) {
    const double p0 = p_max * k / panels, p1 = p_max * (k + 1) / panels;
    const double c = 0.5 * (p0 + p1), half = 0.5 * (p1 - p0);
    for (int q = 0; q < 16; ++q) {
      const double p = c + half * rule.x[q];
      if (p <= 0.0) continue;
      const double damp = std::exp(-0.5 * p * p * tau);
      if (damp < 1e-18) continue;
      const double ja = cyl_j(nu_abs_, p * a), ya = cyl_y(nu_abs_, p * a);
      const double vnorm = ja * ja + ya * ya;
      double left;
      if (prime) {
        left = p * ((cyl_j(nu_abs_ - 1.0, p * v) - (nu_abs_ / (p * v)) * cyl_j(nu_abs_, p * v)) * ya -
                    (cyl_y(nu_abs_ - 1.0, p * v) - (nu_abs_ / (p * v)) * cyl_y(nu_abs_, p * v)) * ja);
      } else {
        left = cyl_j(nu_abs_, p * v) * ya - cyl_y(nu_abs_, p * v) * ja;
      }
      const double common = rule.w[q] * half * damp * p * left / vnorm;
      for (std::size_t i = 0; i < n; ++i) {
        const double ww = cyl_j(nu_abs_, p * w[i]) * ya - cyl_y(nu_abs_, p * w[i]) * ja;
        out[i] += common * ww;
      }
    }
  }
  return 0.0;
}

double ThetaKernel::tiered(double tau, double v, double w, double a, bool prime) const {
  const Split s = classify(tau, v, w, a, 4.0 * nu_abs_ * nu_abs_);
  switch (s.tier) {
    case Tier::dead:
      return 0.0;
    case Tier::free_exact:
      return prime ? free_theta_prime(nu_abs_, tau, v, w, s)
                   : free_theta(nu_abs_, tau, v, w, s);
    case Tier::near_floor:
      return prime
                 ? free_theta_prime(nu_abs_, tau, v, w, s) - floor_image_prime(tau, v, w, s)
                 : free_theta(nu_abs_, tau, v, w, s) - floor_image(tau, v, w, s);
    case Tier::quadrature:
      break;
  }
  double out;
  quad_row_impl(tau, v, &w, 1, a, prime, &out);
  return out;
}

double ThetaKernel::theta(double tau, double v, double w, double a) const {
  if (!(tau > 0.0) || !(v >= a) || !(w > 0.0) || !(a > 0.0))
    throw NumericalError("theta arguments out of domain");
  if (v == a || w == a) return 0.0;
  if (closed_form_) return closed_theta(tau, v, w, a);
  return tiered(tau, v, w, a, false);
}

double ThetaKernel::theta_prime(double tau, double v, double w, double a) const {
  if (!(tau > 0.0) || !(v >= a) || !(w > 0.0) || !(a > 0.0))
    throw NumericalError("theta arguments out of domain");
  if (closed_form_) return closed_theta_prime(tau, v, w, a);
  if (w == a) return 0.0;
  return tiered(tau, v, w, a, true);
}

void ThetaKernel::row_impl(double tau, double v, const std::vector<double>& w, double a,
                           bool prime, std::vector<double>& out) const {
  out.resize(w.size());
  std::vector<double> qw;
  std::vector<std::size_t> qi;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == a) {
      out[i] = 0.0;
      continue;
    }
    const Split s = classify(tau, v, w[i], a, 4.0 * nu_abs_ * nu_abs_);
    switch (s.tier) {
      case Tier::dead:
        out[i] = 0.0;
        break;
      case Tier::free_exact:
        out[i] = prime ? free_theta_prime(nu_abs_, tau, v, w[i], s)
                       : free_theta(nu_abs_, tau, v, w[i], s);
        break;
      case Tier::near_floor:
        out[i] = prime ? free_theta_prime(nu_abs_, tau, v, w[i], s) -
                             floor_image_prime(tau, v, w[i], s)
                       : free_theta(nu_abs_, tau, v, w[i], s) - floor_image(tau, v, w[i], s);
        break;
      case Tier::quadrature:
        qi.push_back(i);
        qw.push_back(w[i]);
        break;
    }
  }
  if (!qw.empty()) {
    std::vector<double> qout(qw.size());
    quad_row_impl(tau, v, qw.data(), qw.size(), a, prime, qout.data());
    for (std::size_t k = 0; k < qi.size(); ++k) out[qi[k]] = qout[k];
  }
}

void ThetaKernel::theta_row(double tau, double v, const std::vector<double>& w, double a,
                            std::vector<double>& out) const {
  out.resize(w.size());
  if (v == a) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  if (closed_form_) {
    for (std::size_t i = 0; i < w.size(); ++i)
      out[i] = (w[i] == a) ? 0.0 : closed_theta(tau, v, w[i], a);
    return;
  }
  row_impl(tau, v, w, a, false, out);
}

void ThetaKernel::theta_prime_row(double tau, double v, const std::vector<double>& w, double a,
                                  std::vector<double>& out) const {
  out.resize(w.size());
  if (closed_form_) {
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = closed_theta_prime(tau, v, w[i], a);
    return;
  }
  row_impl(tau, v, w, a, true, out);
}

double delta_action(double g_at_v, double v, double a) {
  if (v <= a) return 0.0;
  return g_at_v / v;
}

}  // namespace sofrcev::weberorr
