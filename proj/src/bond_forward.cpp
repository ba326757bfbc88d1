#include "bond_forward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "errors.hpp"
#include "grids.hpp"
#include "interp.hpp"
#include "transforms.hpp"
#include "weber_orr.hpp"

namespace sofrcev::bond {

namespace wo = weberorr;

namespace {

double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

// ---------------------------------------------------------------------------
// ZcbSolver

struct ZcbSolver::Impl {
  term::ModelSpec model;
  double T, t_min, y_ref;
  ZcbGrid grid;
  transforms::TransformCache cache;
  wo::ThetaKernel kernel;
  double nu;
  int N, nx;
  double dtau;
  bool delta;

  std::vector<double> tau, tt, xl, xl_pow, dxl, psi, hloc;
  std::vector<std::vector<double>> xg, wx, pow_nu, pow_nu1, u, src, Bfield;
  std::vector<interp::MonotoneCubic> level_interp;
  bool done = false;

  Impl(const term::ModelSpec& m, double maturity, double tmin, double yref, ZcbGrid g)
      : model(m),
        T(maturity),
        t_min(tmin),
        y_ref(yref),
        grid(g),
        cache(m, maturity, tmin),
        kernel(cache.nu_abs()),
        nu(cache.nu()) {
    model.validate();
    if (!(T > t_min)) throw ConfigError("bond maturity must exceed the valuation time");
    for (int i = 0; i <= 32; ++i) {
      double t = t_min + (T - t_min) * i / 32.0;
      if (term::y_lower(model, t) <= 0.0)
        throw ConfigError("bond solver requires a strictly positive reflecting floor");
    }
    if (grid.time_steps < 4) throw ConfigError("bond solver needs at least 4 time steps");
    if (grid.x_nodes < 8) throw ConfigError("bond solver needs at least 8 x nodes");
    setup();
  }

  void setup() {
    N = grid.time_steps;
    nx = grid.x_nodes;
    dtau = cache.tau_total() / N;

    tau.resize(N + 1);
    tt.resize(N + 1);
    xl.resize(N + 1);
    xl_pow.resize(N + 1);
    dxl.resize(N + 1);
    for (int i = 0; i <= N; ++i) {
      tau[i] = dtau * i;
      tt[i] = (i == 0) ? T : (i == N ? t_min : cache.t_of_tau(tau[i]));
      xl[i] = cache.x_l_of_t(tt[i]);
      xl_pow[i] = std::pow(xl[i], nu + 1.0);
      dxl[i] = cache.dxl_dtau_at_t(tt[i]);
    }

    double ymax = grid.y_max > 0.0 ? grid.y_max : 6.0 * std::max(y_ref, -model.rbar_star(t_min));
    double xmax = 0.0;
    for (int i = 0; i <= N; ++i) xmax = std::max(xmax, cache.x_of_y(ymax, tt[i]));
    xmax *= 1.05;
    double mxl = *std::max_element(xl.begin(), xl.end());
    double lo = mxl + (xmax - mxl) * 1e-5;
    double focus = clampd(cache.x_of_y(y_ref, 0.5 * (t_min + T)), lo, xmax);
    std::vector<double> interior = grids::sinh_cluster_nodes(lo, xmax, focus, nx - 1, 2.0, 2.0);

    double dx_min = std::numeric_limits<double>::infinity();
    for (size_t k = 1; k < interior.size(); ++k)
      dx_min = std::min(dx_min, interior[k] - interior[k - 1]);
    delta = std::sqrt(cache.tau_total()) < 0.25 * dx_min;
    if (!delta && !kernel.closed_form() && dtau < wo::ThetaKernel::tau_min())
      throw NumericalError("bond time step below kernel quadrature floor");

    // Largest gap adjacent to each interior node; history panels whose kernel
    // width falls below it are evaluated by the delta action instead of the
    // row quadrature, which would alias the unresolved spike.
    hloc.assign(nx, std::numeric_limits<double>::infinity());
    for (int j = 1; j < nx; ++j) {
      const size_t q = static_cast<size_t>(j - 1);
      double left = q > 0 ? interior[q] - interior[q - 1]
                          : std::numeric_limits<double>::infinity();
      double right = q + 1 < interior.size() ? interior[q + 1] - interior[q]
                                             : std::numeric_limits<double>::infinity();
      hloc[j] = std::min(std::max(left, right),
                         std::min(left, right) * 4.0);  // finite at the ends
    }

    xg.assign(N + 1, {});
    wx.assign(N + 1, {});
    pow_nu.assign(N + 1, {});
    pow_nu1.assign(N + 1, {});
    u.assign(N + 1, std::vector<double>(nx, 0.0));
    src = u;
    Bfield = u;
    psi.assign(N + 1, 0.0);
    for (int i = 0; i <= N; ++i) {
      xg[i].resize(nx);
      xg[i][0] = xl[i];
      std::copy(interior.begin(), interior.end(), xg[i].begin() + 1);
      wx[i] = grids::trapezoid_weights(xg[i]);
      pow_nu[i].resize(nx);
      pow_nu1[i].resize(nx);
      for (int k = 0; k < nx; ++k) {
        pow_nu[i][k] = std::pow(xg[i][k], nu);
        pow_nu1[i][k] = pow_nu[i][k] * xg[i][k];
      }
      double F = cache.F_of_t(tt[i]);
      double sig = model.sigma(tt[i]);
      double E = 1.0 / (F * F * sig * sig);
      double rb = model.rbar_star(tt[i]);
      for (int k = 0; k < nx; ++k) {
        double y = cache.y_of_x(xg[i][k], tt[i]);
        Bfield[i][k] = model.discounting_enabled ? E * (rb + y) : 0.0;
      }
    }
  }

  double lambda_lift(int L, int j) const {
    double x = xg[L][j];
    return (1.0 - cache.b()) * xl[L] / (x * x * x) - dxl[L] / x;
  }

  void freeze_level(int L) {
    for (int k = 0; k < nx; ++k)
      src[L][k] = (1.0 - cache.b()) * xl[L] / (xg[L][k] * xg[L][k] * xg[L][k]) -
                  dxl[L] / xg[L][k] - Bfield[L][k] * u[L][k];
  }

  void run() {
    std::fill(u[0].begin(), u[0].end(), 1.0);
    psi[0] = 1.0 / xl[0];
    freeze_level(0);

    std::vector<double> trow(nx), thp(nx);
    for (int L = 1; L <= N; ++L) {
      const int m = L - 1;
      const double a = xl[L];
      const double amn = std::pow(a, -nu);
      std::vector<double> whist = grids::history_weights(m, dtau);
      std::vector<double> hist(nx, 0.0);
      double acc_psi = 0.0, term_psi = 0.0;

      if (delta) {
        for (int j = 1; j < nx; ++j) {
          double h = 1.0 - xl[0] / xg[L][j];
          for (int s = 0; s <= m; ++s) {
            double weff = whist[s] + (s == m ? 0.5 * dtau : 0.0);
            h += weff * src[s][j];
          }
          hist[j] = h;
        }
        psi[L] = 1.0 / a;
      } else {
        for (int s = 0; s <= m; ++s) {
          double theta_s = tau[L] - tau[s];
          const auto& XS = xg[s];
          const auto& WS = wx[s];
          double weff = whist[s] + (s == m ? 0.5 * dtau : 0.0);

          kernel.theta_prime_row(theta_s, a, XS, a, thp);
          double sp = 0.0;
          for (int k = 0; k < nx; ++k) sp += WS[k] * amn * pow_nu1[s][k] * thp[k] * src[s][k];
          acc_psi += weff * (amn * 0.5 * xl_pow[s] * psi[s] * thp[0] + sp);
          if (s == 0) {
            double tp = 0.0;
            for (int k = 0; k < nx; ++k)
              tp += WS[k] * pow_nu[0][k] * (XS[k] - xl[0]) * thp[k];
            term_psi = amn * tp;
          }

          const double width = std::sqrt(2.0 * theta_s);
          for (int j = 1; j < nx; ++j) {
            if (width < hloc[j]) {
              // Unresolved spike: delta action with the image attenuation of
              // the vanishing-at-the-edge kernel. The floor flux is
              // exponentially small at this range and is dropped.
              double d = xg[L][j] - a;
              double soft = -std::expm1(-d * d / theta_s);
              hist[j] += weff * soft * src[s][j];
              if (s == 0) hist[j] += soft * (1.0 - xl[0] / xg[L][j]);
              continue;
            }
            double xmn = std::pow(xg[L][j], -nu);
            kernel.theta_row(theta_s, xg[L][j], XS, a, trow);
            double sb = 0.0;
            for (int k = 0; k < nx; ++k)
              sb += WS[k] * xmn * pow_nu1[s][k] * trow[k] * src[s][k];
            double fl = 0.5 * xmn * xl_pow[s] * psi[s] * trow[0];
            hist[j] += weff * (fl + sb);
            if (s == 0) {
              double tb = 0.0;
              for (int k = 0; k < nx; ++k)
                tb += WS[k] * pow_nu[0][k] * (XS[k] - xl[0]) * trow[k];
              hist[j] += xmn * tb;
            }
          }
        }
        psi[L] = term_psi + acc_psi;
      }

      u[L][0] = 1.0;
      for (int j = 1; j < nx; ++j) {
        double num = a / xg[L][j] + hist[j] + 0.5 * dtau * lambda_lift(L, j);
        double den = 1.0 + 0.5 * dtau * Bfield[L][j];
        u[L][j] = num / den;
        if (!std::isfinite(u[L][j]))
          throw NumericalError("bond value became non-finite");
      }
      freeze_level(L);
    }

    level_interp.clear();
    level_interp.reserve(N + 1);
    for (int i = 0; i <= N; ++i) level_interp.emplace_back(xg[i], u[i]);
    done = true;
  }

  double value_at(double t, double y) const {
    if (t < t_min - 1e-12 || t > T + 1e-12)
      throw ConfigError("bond query time outside [t_min, maturity]");
    t = clampd(t, t_min, T);
    double tq = cache.tau_of_t(t);
    double x = cache.x_of_y(y, t);
    if (tq <= tau[0]) return level_interp[0](x);
    if (tq >= tau[N]) return level_interp[N](x);
    int hi = 1;
    while (hi < N && tau[hi] < tq) ++hi;
    double w = (tq - tau[hi - 1]) / (tau[hi] - tau[hi - 1]);
    return (1.0 - w) * level_interp[hi - 1](x) + w * level_interp[hi](x);
  }
};

ZcbSolver::ZcbSolver(const term::ModelSpec& model, double maturity, double t_min, double y_ref,
                     ZcbGrid grid)
    : impl_(std::make_unique<Impl>(model, maturity, t_min, y_ref, grid)) {}
ZcbSolver::~ZcbSolver() = default;
ZcbSolver::ZcbSolver(ZcbSolver&&) noexcept = default;
ZcbSolver& ZcbSolver::operator=(ZcbSolver&&) noexcept = default;

void ZcbSolver::solve() {
  if (!impl_->done) impl_->run();
}
double ZcbSolver::value_at(double t, double y) const {
  if (!impl_->done) throw NumericalError("bond query before solve()");
  return impl_->value_at(t, y);
}
double ZcbSolver::maturity() const { return impl_->T; }
int ZcbSolver::levels() const { return impl_->N + 1; }
int ZcbSolver::nodes() const { return impl_->nx; }
double ZcbSolver::level_t(int level) const { return impl_->tt.at(level); }
double ZcbSolver::level_x(int level, int node) const { return impl_->xg.at(level).at(node); }
double ZcbSolver::level_u(int level, int node) const { return impl_->u.at(level).at(node); }
bool ZcbSolver::delta_mode() const { return impl_->delta; }

// ---------------------------------------------------------------------------
// ForwardMap

struct ForwardMap::Impl {
  double T, dq;
  ZcbSolver lower, upper;

  Impl(const term::ModelSpec& model, double maturity, double dq_, double t_min, double y_ref,
       ZcbGrid grid)
      : T(maturity),
        dq(dq_),
        lower(model, maturity - dq_, t_min, y_ref, grid),
        upper(model, maturity + dq_, t_min, y_ref, grid) {
    if (!(dq > 0.0)) throw ConfigError("forward-rate bump dq must be positive");
    if (!(maturity - dq > t_min)) throw ConfigError("forward maturity too close to valuation time");
    lower.solve();
    upper.solve();
  }

  double forward(double t, double y) const {
    double pl = lower.value_at(t, y);
    double pu = upper.value_at(t, y);
    if (!(pl > 0.0) || !(pu > 0.0))
      throw NumericalError("bond value non-positive in forward-rate formation");
    return (std::log(pl) - std::log(pu)) / (2.0 * dq);
  }

  double forward_dy(double t, double y) const {
    double h = std::max(1e-6, 1e-5 * std::abs(y));
    return (forward(t, y + h) - forward(t, y - h)) / (2.0 * h);
  }
};

ForwardMap::ForwardMap(const term::ModelSpec& model, double maturity, double dq, double t_min,
                       double y_ref, ZcbGrid grid)
    : impl_(std::make_unique<Impl>(model, maturity, dq, t_min, y_ref, grid)) {}
ForwardMap::~ForwardMap() = default;
ForwardMap::ForwardMap(ForwardMap&&) noexcept = default;
ForwardMap& ForwardMap::operator=(ForwardMap&&) noexcept = default;

double ForwardMap::forward(double t, double y) const { return impl_->forward(t, y); }
double ForwardMap::forward_dy(double t, double y) const { return impl_->forward_dy(t, y); }
double ForwardMap::maturity() const { return impl_->T; }

// ---------------------------------------------------------------------------
// TransitionDensity

struct TransitionDensity::Impl {
  term::ModelSpec model;
  double t_a, t_b, y_start;
  int N;
  transforms::TransformCache cache;
  wo::ThetaKernel kernel;
  double nu, x_start, sig_x, dtau;
  bool degen;
  std::vector<double> tau, tt, xl, xl_pow;

  Impl(const term::ModelSpec& m, double ta, double tb, double ys, int steps)
      : model(m), t_a(ta), t_b(tb), y_start(ys), N(steps), cache(m, tb, ta),
        kernel(cache.nu_abs()), nu(cache.nu()) {
    model.validate();
    if (N < 4) throw ConfigError("density solve needs at least 4 time steps");
    for (int i = 0; i <= 32; ++i) {
      double t = t_a + (t_b - t_a) * i / 32.0;
      if (term::y_lower(model, t) <= 0.0)
        throw ConfigError("density solve requires a strictly positive floor");
    }
    if (!(y_start > term::y_lower(model, t_a)))
      throw ConfigError("density start level must sit above the floor");
    x_start = cache.x_of_y(y_start, t_a);
    sig_x = std::sqrt(cache.tau_total());
    degen = sig_x < 1e-7 * x_start;
    dtau = cache.tau_total() / N;
    if (!degen && !kernel.closed_form() && dtau < wo::ThetaKernel::tau_min())
      throw NumericalError("density time step below kernel quadrature floor");
    tau.resize(N + 1);
    tt.resize(N + 1);
    xl.resize(N + 1);
    xl_pow.resize(N + 1);
    for (int i = 0; i <= N; ++i) {
      tau[i] = dtau * i;
      tt[i] = (i == 0) ? t_b : (i == N ? t_a : cache.t_of_tau(tau[i]));
      xl[i] = cache.x_l_of_t(tt[i]);
      xl_pow[i] = std::pow(xl[i], nu + 1.0);
    }
  }

  // Killed-diffusion value at (t_a, x_start) of the Gaussian spike delta_h(. - c).
  double solve_target(double c, double h) const {
    const int ng = 41;
    double lo = std::max(xl[0] * (1.0 + 1e-12), c - 6.0 * h);
    double hi = c + 6.0 * h;
    if (!(hi > lo)) return 0.0;
    std::vector<double> xi(ng), gval(ng);
    for (int q = 0; q < ng; ++q) xi[q] = lo + (hi - lo) * q / (ng - 1);
    std::vector<double> gw = grids::trapezoid_weights(xi);
    const double norm = 1.0 / (std::sqrt(2.0 * M_PI) * h);
    for (int q = 0; q < ng; ++q) {
      double d = (xi[q] - c) / h;
      // combined terminal weight: quadrature * Green weight * spike value
      gval[q] = gw[q] * std::pow(xi[q], nu + 1.0) * norm * std::exp(-0.5 * d * d);
    }

    std::vector<double> psi(N + 1, 0.0);
    {
      double d = (xl[0] - c) / h;
      psi[0] = -norm * (d / h) * std::exp(-0.5 * d * d);
    }
    std::vector<double> thp(ng), trow(ng);
    for (int L = 1; L <= N; ++L) {
      const double a = xl[L];
      const double amn = std::pow(a, -nu);
      std::vector<double> whist = grids::history_weights(L - 1, dtau);
      kernel.theta_prime_row(tau[L], a, xi, a, thp);
      double term = 0.0;
      for (int q = 0; q < ng; ++q) term += gval[q] * thp[q];
      double acc = 0.0;
      for (int s = 0; s <= L - 1; ++s) {
        double weff = whist[s] + (s == L - 1 ? 0.5 * dtau : 0.0);
        acc += weff * 0.5 * xl_pow[s] * psi[s] *
               kernel.theta_prime(tau[L] - tau[s], a, xl[s], a);
      }
      psi[L] = amn * (term + acc);
    }

    const double aN = xl[N];
    const double xmn = std::pow(x_start, -nu);
    kernel.theta_row(tau[N], x_start, xi, aN, trow);
    double val = 0.0;
    for (int q = 0; q < ng; ++q) val += gval[q] * trow[q];
    std::vector<double> whist = grids::history_weights(N - 1, dtau);
    for (int s = 0; s <= N - 1; ++s) {
      double weff = whist[s] + (s == N - 1 ? 0.5 * dtau : 0.0);
      val += weff * 0.5 * xl_pow[s] * psi[s] *
             kernel.theta(tau[N] - tau[s], x_start, xl[s], aN);
    }
    return xmn * val;
  }

  Sample sample(int n, double width) const {
    Sample out;
    if (degen) {
      out.point_mass = true;
      out.mass = 1.0;
      out.y_point = cache.y_of_x(x_start, t_b);
      return out;
    }
    if (n < 9) throw ConfigError("density sampling needs at least 9 targets");
    double lo = std::max(xl[0] * (1.0 + 1e-9), x_start - width * sig_x);
    double hi = x_start + width * sig_x;
    std::vector<double> cx = grids::uniform_nodes(lo, hi, n);
    const double h = cx[1] - cx[0];
    std::vector<double> qx(n);
    for (int i = 0; i < n; ++i) qx[i] = std::max(solve_target(cx[i], h), 0.0);
    std::vector<double> wx = grids::trapezoid_weights(cx);
    out.y.resize(n);
    out.q_y.resize(n);
    const double Fb = cache.F_of_t(t_b);
    double mass = 0.0;
    for (int i = 0; i < n; ++i) {
      out.y[i] = cache.y_of_x(cx[i], t_b);
      // q_y = q_x * dx/dy at t_b
      out.q_y[i] = qx[i] * std::pow(out.y[i], -model.beta - 1.0) * Fb;
      mass += wx[i] * qx[i];
    }
    out.mass = mass;
    return out;
  }
};

TransitionDensity::TransitionDensity(const term::ModelSpec& model, double t_a, double t_b,
                                     double y_start, int time_steps)
    : impl_(std::make_unique<Impl>(model, t_a, t_b, y_start, time_steps)) {}
TransitionDensity::~TransitionDensity() = default;
TransitionDensity::TransitionDensity(TransitionDensity&&) noexcept = default;
TransitionDensity& TransitionDensity::operator=(TransitionDensity&&) noexcept = default;

TransitionDensity::Sample TransitionDensity::sample(int n, double width) const {
  return impl_->sample(n, width);
}
bool TransitionDensity::degenerate() const { return impl_->degen; }

// ---------------------------------------------------------------------------
// ForwardPutEngine

struct ForwardPutEngine::Impl {
  term::ModelSpec model;
  ForwardPutSpec spec;
  ForwardPutGrid grid;
  transforms::TransformCache cache;
  wo::ThetaKernel kernel;
  ForwardMap fmap;
  double nu, K;
  int N;
  double dtau;
  bool euro;

  std::vector<double> tau, tt, xlv;
  std::vector<double> xb, xb_pow, psi, gamma_, residual;
  std::vector<double> master;  // interior candidate nodes, shared by levels
  std::vector<std::vector<double>> xg, wx, pow_nu, pow_nu1, u, src, Bfield;
  bool done = false;

  Impl(const term::ModelSpec& m, ForwardPutSpec s, ForwardPutGrid g)
      : model(m),
        spec(s),
        grid(g),
        cache(m, s.expiry, s.t0),
        kernel(cache.nu_abs()),
        fmap(m, s.expiry + s.tenor, s.dq, s.t0, s.y_spot,
             ZcbGrid{96, 200, 6.0 * std::max(s.y_spot, -m.rbar_star(s.t0))}),
        nu(cache.nu()),
        K(s.strike) {
    model.validate();
    if (!(K > 0.0)) throw ConfigError("forward-put strike must be positive");
    if (!(spec.expiry > spec.t0)) throw ConfigError("forward-put expiry must exceed t0");
    if (!(spec.tenor > 0.0)) throw ConfigError("forward-put tenor must be positive");
    if (grid.time_steps < 4 || grid.x_nodes < 16)
      throw ConfigError("forward-put grid too small");
    euro = spec.style == asian::ExerciseStyle::european;
    setup();
  }

  double f_of(double t, double x) const { return fmap.forward(t, cache.y_of_x(x, t)); }

  double fx_of(double t, double x) const {
    double h = 1e-5 * x;
    return (f_of(t, x + h) - f_of(t, x - h)) / (2.0 * h);
  }

  void setup() {
    N = grid.time_steps;
    dtau = cache.tau_total() / N;
    if (!kernel.closed_form() && dtau < wo::ThetaKernel::tau_min())
      throw NumericalError("forward-put time step below kernel quadrature floor");
    tau.resize(N + 1);
    tt.resize(N + 1);
    xlv.resize(N + 1);
    for (int i = 0; i <= N; ++i) {
      tau[i] = dtau * i;
      tt[i] = (i == 0) ? spec.expiry : (i == N ? spec.t0 : cache.t_of_tau(tau[i]));
      xlv[i] = cache.x_l_of_t(tt[i]);
    }

    // Anchor: the point where the terminal forward crosses the strike.
    double lo = xlv[0] * (1.0 + 1e-9), hi0 = 0.0;
    double xmax = grid.x_max;
    if (xmax <= 0.0) xmax = 8.0 * cache.x_of_y(std::max(spec.y_spot, -model.rbar_star(spec.t0)), spec.t0);
    double flo = f_of(tt[0], lo), fhi = f_of(tt[0], xmax);
    if (!(flo < K && fhi > K))
      throw ConfigError("strike outside the attainable terminal forward range");
    double a = lo, b2 = xmax;
    for (int it = 0; it < 80; ++it) {
      double mid = 0.5 * (a + b2);
      (f_of(tt[0], mid) < K ? a : b2) = mid;
    }
    hi0 = 0.5 * (a + b2);

    xb.assign(N + 1, 0.0);
    xb_pow.assign(N + 1, 0.0);
    psi.assign(N + 1, 0.0);
    gamma_.assign(N + 1, 0.0);
    residual.assign(N + 1, 0.0);
    xb[0] = euro ? xlv[0] : hi0;
    xb_pow[0] = std::pow(xb[0], nu + 1.0);

    double mxl = *std::max_element(xlv.begin(), xlv.end());
    double mlo = mxl + (xmax - mxl) * 1e-5;
    master = grids::sinh_cluster_nodes(mlo, xmax, hi0, grid.x_nodes, 4.0, 1.0);

    xg.assign(N + 1, {});
    wx.assign(N + 1, {});
    pow_nu.assign(N + 1, {});
    pow_nu1.assign(N + 1, {});
    u.assign(N + 1, {});
    src.assign(N + 1, {});
    Bfield.assign(N + 1, {});
    build_level_grid(0);
  }

  void build_level_grid(int L) {
    double edge = xb[L];
    xg[L].clear();
    xg[L].push_back(edge);
    for (double xm : master)
      if (xm > edge * (1.0 + 1e-10)) xg[L].push_back(xm);
    int n = static_cast<int>(xg[L].size());
    if (n < 8) throw NumericalError("forward-put level grid collapsed");
    wx[L] = grids::trapezoid_weights(xg[L]);
    pow_nu[L].resize(n);
    pow_nu1[L].resize(n);
    for (int k = 0; k < n; ++k) {
      pow_nu[L][k] = std::pow(xg[L][k], nu);
      pow_nu1[L][k] = pow_nu[L][k] * xg[L][k];
    }
    double F = cache.F_of_t(tt[L]);
    double sig = model.sigma(tt[L]);
    double E = 1.0 / (F * F * sig * sig);
    double rb = model.rbar_star(tt[L]);
    Bfield[L].resize(n);
    for (int k = 0; k < n; ++k) {
      double y = cache.y_of_x(xg[L][k], tt[L]);
      Bfield[L][k] = model.discounting_enabled ? E * (rb + y) : 0.0;
    }
    u[L].assign(n, 0.0);
    src[L].assign(n, 0.0);
  }

  void freeze_level(int L, double gprime) {
    int n = static_cast<int>(xg[L].size());
    for (int k = 0; k < n; ++k) {
      double x = xg[L][k];
      src[L][k] = (1.0 - cache.b()) * gamma_[L] / (x * x * x) - gprime / x -
                  Bfield[L][k] * u[L][k];
    }
  }

  // Gradient of ubar at the level edge for a candidate boundary a.
  double psi_candidate(int L, double a, const std::vector<double>& whist) const {
    double amn = std::pow(a, -nu);
    double acc = 0.0;
    std::vector<double> thp;
    for (int s = 0; s <= L - 1; ++s) {
      double theta_s = tau[L] - tau[s];
      double weff = whist[s] + (s == L - 1 ? 0.5 * dtau : 0.0);
      kernel.theta_prime_row(theta_s, a, xg[s], a, thp);
      double sp = 0.0;
      int n = static_cast<int>(xg[s].size());
      for (int k = 0; k < n; ++k)
        sp += wx[s][k] * amn * pow_nu1[s][k] * thp[k] * src[s][k];
      double fl = amn * 0.5 * xb_pow[s] * psi[s] * thp[0];
      acc += weff * (fl + sp);
      if (s == 0 && euro) {
        // European terminal carries the payoff minus the floor lift.
        double tp = 0.0;
        for (int k = 0; k < n; ++k)
          tp += wx[s][k] * amn * pow_nu1[s][k] * thp[k] * u0_bar(xg[s][k]);
        acc += tp;
      }
    }
    return acc;
  }

  // Terminal ubar for the european whole-region form.
  double u0_bar(double xi) const {
    double pay = std::max(K - f_of(tt[0], xi), 0.0);
    return pay - gamma_[0] / xi;
  }

  // Smooth-pasting residual for candidate boundary a at level L.
  double pasting_res(int L, double a, const std::vector<double>& whist) const {
    double g = a * (K - f_of(tt[L], a));
    double target = -fx_of(tt[L], a) + g / (a * a);
    return psi_candidate(L, a, whist) - target;
  }

  void run() {
    // Terminal data.
    gamma_[0] = euro ? xlv[0] * (K - f_of(tt[0], xlv[0])) : 0.0;
    int n0 = static_cast<int>(xg[0].size());
    for (int k = 0; k < n0; ++k)
      u[0][k] = euro ? std::max(K - f_of(tt[0], xg[0][k]), 0.0) : 0.0;
    if (euro) {
      double h = 1e-5 * xb[0];
      double slope = (u0_bar(xb[0] + 2 * h) - u0_bar(xb[0] + h)) / h;
      psi[0] = slope;
    } else {
      psi[0] = 0.0;
    }
    freeze_level(0, 0.0);

    std::vector<double> trow;
    for (int L = 1; L <= N; ++L) {
      std::vector<double> whist = grids::history_weights(L - 1, dtau);

      if (euro) {
        xb[L] = xlv[L];
      } else {
        // Bracketed bisection on the smooth-pasting residual.
        double lo = xlv[L] * (1.0 + 1e-7);
        double hi = xb[0];
        double rlo = pasting_res(L, lo, whist);
        double a = lo, b2 = hi;
        bool bracketed = false;
        const int scan = 24;
        double prev = lo, rprev = rlo;
        for (int i = 1; i <= scan; ++i) {
          double c = lo + (hi - lo) * i / scan;
          double rc = pasting_res(L, c, whist);
          if (rprev == 0.0 || rprev * rc < 0.0) {
            a = prev;
            b2 = c;
            bracketed = true;
            break;
          }
          prev = c;
          rprev = rc;
        }
        if (bracketed) {
          for (int it = 0; it < 60; ++it) {
            double mid = 0.5 * (a + b2);
            double rm = pasting_res(L, mid, whist);
            if (rlo * rm <= 0.0) {
              b2 = mid;
            } else {
              a = mid;
              rlo = rm;
            }
          }
          xb[L] = 0.5 * (a + b2);
        } else {
          xb[L] = xb[L - 1];  // no sign change: carry the boundary
        }
      }
      xb_pow[L] = std::pow(xb[L], nu + 1.0);
      gamma_[L] = xb[L] * (K - f_of(tt[L], xb[L]));
      residual[L] = euro ? 0.0 : pasting_res(L, xb[L], whist);
      psi[L] = psi_candidate(L, xb[L], whist);
      build_level_grid(L);

      // Surface assembly on the level grid.
      double a = xb[L];
      double gprime = (gamma_[L] - gamma_[L - 1]) / dtau;
      int n = static_cast<int>(xg[L].size());
      for (int j = 0; j < n; ++j) {
        if (j == 0) {
          u[L][0] = K - f_of(tt[L], a);
          continue;
        }
        double x = xg[L][j];
        double xmn = std::pow(x, -nu);
        double hist = 0.0;
        for (int s = 0; s <= L - 1; ++s) {
          double theta_s = tau[L] - tau[s];
          double weff = whist[s] + (s == L - 1 ? 0.5 * dtau : 0.0);
          kernel.theta_row(theta_s, x, xg[s], a, trow);
          int ns = static_cast<int>(xg[s].size());
          double sb = 0.0;
          for (int k = 0; k < ns; ++k)
            sb += wx[s][k] * xmn * pow_nu1[s][k] * trow[k] * src[s][k];
          double fl = 0.5 * xmn * xb_pow[s] * psi[s] * trow[0];
          hist += weff * (fl + sb);
          if (s == 0 && euro) {
            double tb = 0.0;
            for (int k = 0; k < ns; ++k)
              tb += wx[s][k] * xmn * pow_nu1[s][k] * trow[k] * u0_bar(xg[s][k]);
            hist += tb;
          }
        }
        double lam = (1.0 - cache.b()) * gamma_[L] / (x * x * x) - gprime / x;
        double num = gamma_[L] / x + hist + 0.5 * dtau * lam;
        double den = 1.0 + 0.5 * dtau * Bfield[L][j];
        u[L][j] = num / den;
        if (!euro) u[L][j] = std::max(u[L][j], std::max(K - f_of(tt[L], x), 0.0));
        if (!std::isfinite(u[L][j]))
          throw NumericalError("forward-put value became non-finite");
      }
      freeze_level(L, gprime);
    }
    done = true;
  }

  double price_at(double y) const {
    double x = cache.x_of_y(y, tt[N]);
    if (!euro && x <= xb[N]) return std::max(K - f_of(tt[N], x), 0.0);
    interp::MonotoneCubic f(xg[N], u[N]);
    return f(x);
  }
};

ForwardPutEngine::ForwardPutEngine(const term::ModelSpec& model, ForwardPutSpec spec,
                                   ForwardPutGrid grid)
    : impl_(std::make_unique<Impl>(model, spec, grid)) {}
ForwardPutEngine::~ForwardPutEngine() = default;
ForwardPutEngine::ForwardPutEngine(ForwardPutEngine&&) noexcept = default;
ForwardPutEngine& ForwardPutEngine::operator=(ForwardPutEngine&&) noexcept = default;

void ForwardPutEngine::solve() {
  if (!impl_->done) impl_->run();
}
double ForwardPutEngine::price_at(double y) const {
  if (!impl_->done) throw NumericalError("forward-put query before solve()");
  return impl_->price_at(y);
}
const std::vector<double>& ForwardPutEngine::boundary_x() const { return impl_->xb; }
std::vector<double> ForwardPutEngine::boundary_y() const {
  std::vector<double> out(impl_->xb.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = impl_->cache.y_of_x(impl_->xb[i], impl_->tt[i]);
  return out;
}
const std::vector<double>& ForwardPutEngine::level_times() const { return impl_->tt; }
double ForwardPutEngine::pasting_residual(int level) const { return impl_->residual.at(level); }
const ForwardMap& ForwardPutEngine::forward_map() const { return impl_->fmap; }

}  // namespace sofrcev::bond
