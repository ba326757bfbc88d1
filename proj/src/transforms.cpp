#include "transforms.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace sofrcev::transforms {

namespace {

// 24-point Gauss-Legendre rule on [-1, 1]; machine precision for analytic
// integrands on a single smooth segment.
struct GL24 {
  std::array<double, 24> x, w;
  GL24() {
    // Nodes/weights generated by Newton iteration on Legendre P24.
    constexpr int n = 24;
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

const GL24& gl24() {
  static const GL24 rule;
  return rule;
}

template <class Fn>
double gl_segment(Fn&& f, double a, double b) {
  const auto& r = gl24();
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  double acc = 0.0;
  for (int i = 0; i < 24; ++i) acc += r.w[i] * f(c + h * r.x[i]);
  return acc * h;
}

}  // namespace

TransformCache::TransformCache(const term::ModelSpec& model, double maturity, double t_min)
    : model_(&model), maturity_(maturity), t_min_(t_min), beta_(model.beta) {
  model.validate();
  if (!(t_min_ < maturity_)) throw ConfigError("transform needs t_min < maturity");
  if (maturity_ > model.horizon + 1e-12)
    throw ConfigError("transform maturity exceeds model horizon");
  nu_ = 1.0 / (2.0 * beta_);
  b_ = (1.0 + beta_) / (2.0 * beta_);

  // Dense tabulation of the monotone forward maps; inverses are monotone
  // cubic fits polished by one Newton step at query time.
  const int n = 2048;
  std::vector<double> ts(n + 1), phis(n + 1), taus(n + 1);
  for (int i = 0; i <= n; ++i)
    ts[i] = maturity_ - (maturity_ - t_min_) * static_cast<double>(i) / n;
  for (int i = 0; i <= n; ++i) {
    phis[i] = phi_of_t(ts[i]);
    taus[i] = tau_of_t(ts[i]);
  }
  // phi and tau are increasing along ts reversed (ts decreasing), so the
  // (phi -> t) and (tau -> t) tables are already properly ordered.
  t_from_phi_ = interp::MonotoneCubic(phis, ts);
  t_from_tau_ = interp::MonotoneCubic(taus, ts);
  tau_total_ = taus.back();

  max_x_l_ = 0.0;
  for (int i = 0; i <= n; ++i) max_x_l_ = std::max(max_x_l_, x_l_of_t(ts[i]));
}

double TransformCache::phi_of_t(double t) const {
  const auto& sig = model_->sigma;
  if (sig.kind() == term::ParamCurve::Kind::constant_segments) {
    // sigma^2 piecewise constant: integrate exactly segment by segment.
    double acc = 0.0;
    double a = t;
    auto cuts = sig.breakpoints_between(t, maturity_);
    cuts.push_back(maturity_);
    for (double c : cuts) {
      const double mid = 0.5 * (a + c);
      const double s = sig(mid);
      acc += s * s * (c - a);
      a = c;
    }
    return acc;
  }
  // Linear segments: sigma^2 is quadratic per segment; GL is exact.
  double acc = 0.0;
  double a = t;
  auto cuts = sig.breakpoints_between(t, maturity_);
  cuts.push_back(maturity_);
  for (double c : cuts) {
    acc += gl_segment([&](double u) { const double s = sig(u); return s * s; }, a, c);
    a = c;
  }
  return acc;
}

double TransformCache::F_of_t(double t) const {
  // Exponent sign is fixed by drift removal: d(chi(y_t) F(t)) must lose its
  // dt term under dy = -alpha y dt + ..., which forces F' = -beta alpha F.
  return std::exp(beta_ * model_->alpha.integral(t, maturity_));
}

double TransformCache::tau_of_t(double t) const {
  if (t >= maturity_) return 0.0;
  const auto& alpha = model_->alpha;
  const auto& sig = model_->sigma;
  std::vector<double> cuts = alpha.breakpoints_between(t, maturity_);
  for (double c : sig.breakpoints_between(t, maturity_)) cuts.push_back(c);
  cuts.push_back(maturity_);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  const bool both_const =
      alpha.kind() == term::ParamCurve::Kind::constant_segments &&
      sig.kind() == term::ParamCurve::Kind::constant_segments;
  double acc = 0.0;
  double a = t;
  for (double cend : cuts) {
    if (both_const) {
      // Within the segment F^2(u) = F^2(cend) * exp(2 beta alpha (cend - u)),
      // which integrates in closed form against the constant sigma^2.
      const double mid = 0.5 * (a + cend);
      const double al = alpha(mid);
      const double s2 = sig(mid) * sig(mid);
      const double Fe = F_of_t(cend);
      const double c = 2.0 * beta_ * al;
      const double len = cend - a;
      const double base = Fe * Fe * s2;
      acc += (std::abs(c) < 1e-14) ? base * len : base * (std::expm1(c * len)) / c;
    } else {
      acc += gl_segment(
          [&](double u) {
            const double F = F_of_t(u);
            const double s = sig(u);
            return F * F * s * s;
          },
          a, cend);
    }
    a = cend;
  }
  return acc;
}

double TransformCache::t_of_phi(double phi) const {
  double t = t_from_phi_(phi);
  t = std::clamp(t, t_min_, maturity_);
  // One Newton polish on the exact forward map; d phi/dt = -sigma^2(t).
  const double s = model_->sigma(t);
  const double g = phi_of_t(t) - phi;
  double tn = t + g / (s * s);
  if (tn >= t_min_ && tn <= maturity_) t = tn;
  return t;
}

double TransformCache::t_of_tau(double tau) const {
  double t = t_from_tau_(tau);
  t = std::clamp(t, t_min_, maturity_);
  const double s = model_->sigma(t);
  const double F = F_of_t(t);
  const double g = tau_of_t(t) - tau;
  double tn = t + g / (F * F * s * s);
  if (tn >= t_min_ && tn <= maturity_) t = tn;
  return t;
}

double TransformCache::chi_of_y(double y) const {
  return -(1.0 / beta_) * std::pow(y, -beta_);
}

double TransformCache::y_of_chi(double chi) const {
  return std::pow(-chi * beta_, -1.0 / beta_);
}

double TransformCache::x_of_y(double y, double t) const { return chi_of_y(y) * F_of_t(t); }

double TransformCache::y_of_x(double x, double t) const { return y_of_chi(x / F_of_t(t)); }

double TransformCache::x_l_of_t(double t) const {
  const double yl = term::y_lower(*model_, t);
  if (yl == 0.0) return 0.0;
  return x_of_y(yl, t);
}

double TransformCache::x_l_of_tau(double tau) const { return x_l_of_t(t_of_tau(tau)); }

double TransformCache::dxl_dtau_at_t(double t) const {
  const double yl = term::y_lower(*model_, t);
  if (yl == 0.0) return 0.0;
  const double ylp = term::y_lower_derivative(*model_, t);
  const double al = model_->alpha(t);
  const double s = model_->sigma(t);
  const double F = F_of_t(t);
  // Chain rule on x_l = chi(y_l(t)) F(t) with dtau/dt = -F^2 sigma^2.
  return -(al * std::pow(yl, -beta_) + std::pow(yl, -beta_ - 1.0) * ylp) / (F * s * s);
}

}  // namespace sofrcev::transforms
