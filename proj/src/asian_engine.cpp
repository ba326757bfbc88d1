#include "asian_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "errors.hpp"
#include "interp.hpp"

namespace sofrcev::asian {

namespace wo = weberorr;

namespace {

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

// Quadratic extrapolation one uniform step past the last of three values.
double extrapolate3(double f2, double f1, double f0) {
  // f2 oldest, f0 newest; result at one step past f0.
  return 3.0 * f0 - 3.0 * f1 + f2;
}

double lin_interp(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  auto it = std::upper_bound(xs.begin(), xs.end(), x);
  size_t i = static_cast<size_t>(it - xs.begin());
  double t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
  return ys[i - 1] + t * (ys[i] - ys[i - 1]);
}

// Even-panel Simpson rule on [lo, hi]; false when the span is empty.
bool simpson_rule(double lo, double hi, int panels, std::vector<double>& x,
                  std::vector<double>& w) {
  if (!(hi > lo)) return false;
  if (panels % 2) ++panels;
  const int n = panels + 1;
  const double h = (hi - lo) / panels;
  x.resize(n);
  w.resize(n);
  for (int i = 0; i < n; ++i) {
    x[i] = lo + h * i;
    w[i] = (i == 0 || i == n - 1) ? h / 3.0 : (i % 2 ? 4.0 * h / 3.0 : 2.0 * h / 3.0);
  }
  x.back() = hi;
  return true;
}

// Simpson nodes on [lo, hi], log-spaced when the span covers several octaves
// above the floor so the steep drift profile there stays resolved.
bool fine_nodes(double lo, double hi, int panels, std::vector<double>& x,
                std::vector<double>& w) {
  if (!(lo > 0.0) || hi <= 60.0 * lo) return simpson_rule(lo, hi, panels, x, w);
  if (!simpson_rule(std::log(lo), std::log(hi), panels, x, w)) return false;
  for (size_t i = 0; i < x.size(); ++i) {
    x[i] = std::exp(x[i]);
    w[i] *= x[i];
  }
  x.front() = lo;
  x.back() = hi;
  return true;
}

// Bracketing indices and fractions of query nodes inside a source grid, for
// repeated linear interpolation of several data columns.
struct Brackets {
  std::vector<size_t> idx;
  std::vector<double> frac;
  void build(const std::vector<double>& grid, const std::vector<double>& q) {
    idx.resize(q.size());
    frac.resize(q.size());
    for (size_t i = 0; i < q.size(); ++i) {
      if (q[i] <= grid.front()) {
        idx[i] = 0;
        frac[i] = 0.0;
      } else if (q[i] >= grid.back()) {
        idx[i] = grid.size() - 2;
        frac[i] = 1.0;
      } else {
        size_t k = static_cast<size_t>(std::upper_bound(grid.begin(), grid.end(), q[i]) -
                                       grid.begin());
        idx[i] = k - 1;
        frac[i] = (q[i] - grid[k - 1]) / (grid[k] - grid[k - 1]);
      }
    }
  }
};

}  // namespace

struct AsianEngine::Impl {
  term::ModelSpec model;
  Instrument inst;
  GridSpec grid;
  SchemeOptions opts;
  transforms::TransformCache cache;
  wo::ThetaKernel kernel;

  double nu, K;
  int N, nx, nz;
  double dtau;
  bool euro;

  std::vector<double> tau, tt, xl, xl_pow;  // per level; xl_pow = x_l^{nu+1}
  std::vector<double> zg;
  std::vector<double> hx;  // conservative local spacing of the shared interior grid

  // Per-level surfaces and coefficient fields.
  std::vector<std::vector<double>> xg, wx, pow_nu, pow_nu1;
  std::vector<std::vector<double>> zb, lB, cB;
  std::vector<double> psib;
  std::vector<std::vector<double>> psi;
  std::vector<std::vector<std::vector<double>>> ub, ubz;
  std::vector<double> Qc;
  // Scalar coefficient ingredients per level, for closed-form evaluation of
  // the equation coefficients at off-grid abscissas.
  std::vector<double> tec, Ec, rbc, xlec, dxlc;
  std::vector<std::vector<double>> Bf, C0f, lamf, laminhf;
  // Source matrices frozen per level for reuse by later levels: [k*nz + q].
  std::vector<std::vector<double>> Dmat, Pmat;

  BoundarySolution bnd;
  PriceCube cube;
  bool boundary_only_done = false, full_done = false;

  Impl(const term::ModelSpec& m, Instrument in, GridSpec g, SchemeOptions op)
      : model(m),
        inst(in),
        grid(g),
        opts(op),
        cache(m, in.expiry, in.t0),
        kernel(cache.nu_abs()),
        nu(cache.nu()),
        K(in.strike) {
    validate();
    setup();
  }

  void validate() {
    model.validate();
    if (!(K > 0.0)) throw ConfigError("strike must be positive");
    if (!(inst.expiry > inst.t0)) throw ConfigError("expiry must exceed the valuation time");
    if (grid.time_steps < 4) throw ConfigError("need at least 4 time steps");
    if (grid.x_nodes < 8) throw ConfigError("need at least 8 x nodes");
    if (grid.z_nodes < 4) throw ConfigError("need at least 4 z nodes");
    // The lift and kernel images carry 1/x_l; the scheme needs a strictly
    // positive reflecting floor over the whole pricing window.
    const int samples = 64;
    for (int i = 0; i <= samples; ++i) {
      double t = inst.t0 + (inst.expiry - inst.t0) * i / samples;
      if (term::y_lower(model, t) <= 0.0)
        throw ConfigError("reflecting floor y_l(t) must stay positive: rbar_star must be negative");
    }
    if (inst.y_spot <= term::y_lower(model, inst.t0))
      throw ConfigError("y_spot must lie above the reflecting floor at t0");
  }

  double spot_average_start() const { return model.rbar_star(inst.t0) + inst.y_spot; }

  void setup() {
    euro = inst.style == ExerciseStyle::european;
    N = grid.time_steps;
    nx = grid.x_nodes;
    nz = grid.z_nodes;
    dtau = cache.tau_total() / N;
    if (!kernel.closed_form() && dtau < wo::ThetaKernel::tau_min())
      throw NumericalError("time step in tau is below the kernel quadrature floor; "
                           "reduce time_steps or increase volatility");

    tau.resize(N + 1);
    tt.resize(N + 1);
    xl.resize(N + 1);
    xl_pow.resize(N + 1);
    for (int i = 0; i <= N; ++i) {
      tau[i] = dtau * i;
      tt[i] = (i == N) ? inst.t0 : cache.t_of_tau(tau[i]);
      xl[i] = cache.x_l_of_t(tt[i]);
      xl_pow[i] = std::pow(xl[i], nu + 1.0);
    }

    double x_spot = cache.x_of_y(inst.y_spot, inst.t0);
    double mxl = *std::max_element(xl.begin(), xl.end());
    if (!(grid.x_max > 1.5 * x_spot && grid.x_max > 2.0 * mxl))
      throw ConfigError("x_max too small for the spot and the reflecting floor");
    double lo = mxl + (grid.x_max - mxl) * 1e-5;
    std::vector<double> interior =
        grids::sinh_cluster_nodes(lo, grid.x_max, x_spot, nx - 1,
                                  grid.cluster_focus_strength, grid.cluster_lower_strength);

    // The average-rate window must resolve the payoff kink at K and the sweep
    // path between boundary and spot average; a deviation scale for the
    // running average sizes it when the caller leaves the bounds automatic.
    double z0 = spot_average_start();
    double sigz = model.sigma(inst.t0) * std::pow(inst.y_spot, model.beta + 1.0) *
                  std::sqrt((inst.expiry - inst.t0) / 3.0);
    double span = std::max(4.0 * sigz, 0.05 * std::max(K, std::abs(z0)));
    double zlo = grid.z_lo;
    double ztop = grid.z_top;
    if (zlo < 0.0) zlo = std::max(0.0, std::min(K, z0) - span);
    if (ztop <= 0.0) ztop = std::max(K, z0) + span;
    if (!(ztop > zlo)) throw ConfigError("z_top must exceed z_lo");
    if (zlo < K && K < ztop && nz > 1) {
      // Shift the window so the payoff kink sits on a node.
      double dz = (ztop - zlo) / (nz - 1);
      zlo += K - zlo - std::round((K - zlo) / dz) * dz;
      while (zlo < 0.0) zlo += dz;
      ztop = zlo + dz * (nz - 1);
    }
    zg = grids::uniform_nodes(zlo, ztop, nz);

    hx.assign(nx, 0.0);
    hx[0] = interior[1] - interior[0];
    for (int j = 1; j < nx; ++j) {
      double left = (j >= 2) ? interior[j - 1] - interior[j - 2] : hx[0];
      double right = (j <= nx - 2) ? interior[j] - interior[j - 1] : left;
      hx[j] = std::max(left, right);
    }

    xg.assign(N + 1, {});
    wx.assign(N + 1, {});
    pow_nu.assign(N + 1, {});
    pow_nu1.assign(N + 1, {});
    Bf.assign(N + 1, {});
    C0f.assign(N + 1, {});
    lamf.assign(N + 1, {});
    laminhf.assign(N + 1, {});
    Qc.assign(N + 1, 0.0);
    tec.assign(N + 1, 0.0);
    Ec.assign(N + 1, 0.0);
    rbc.assign(N + 1, 0.0);
    xlec.assign(N + 1, 0.0);
    dxlc.assign(N + 1, 0.0);
    zb.assign(N + 1, std::vector<double>(nx, 0.0));
    lB.assign(N + 1, std::vector<double>(nx, 0.0));
    cB.assign(N + 1, std::vector<double>(nx, 0.0));
    psib.assign(N + 1, 0.0);
    psi.assign(N + 1, std::vector<double>(nz, 0.0));
    ub.assign(N + 1, std::vector<std::vector<double>>(nx, std::vector<double>(nz, 0.0)));
    ubz = ub;
    Dmat.assign(N + 1, std::vector<double>(static_cast<size_t>(nx) * nz, 0.0));
    Pmat = Dmat;

    for (int i = 0; i <= N; ++i) {
      xg[i].resize(nx);
      xg[i][0] = xl[i];
      std::copy(interior.begin(), interior.end(), xg[i].begin() + 1);
      if (xg[i][1] <= xg[i][0])
        throw ConfigError("first interior x node does not clear the reflecting floor");
      wx[i] = grids::trapezoid_weights(xg[i]);
      pow_nu[i].resize(nx);
      pow_nu1[i].resize(nx);
      for (int k = 0; k < nx; ++k) {
        pow_nu[i][k] = std::pow(xg[i][k], nu);
        pow_nu1[i][k] = pow_nu[i][k] * xg[i][k];
      }
      fill_coeffs(i);
    }
  }

  // Coefficient evaluation time: interior guard point for the final level,
  // where the averaging coefficients 1/(t - t0) blow up.
  double t_eval(int L) const {
    if (L == N) return inst.t0 + (tt[N - 1] - inst.t0) * 0.5;
    return tt[L];
  }

  void fill_coeffs(int L) {
    double te = t_eval(L);
    double F = cache.F_of_t(te);
    double sig = model.sigma(te);
    double E = 1.0 / (F * F * sig * sig);
    double rb = model.rbar_star(te);
    double xle = cache.x_l_of_t(te);
    double dxl = cache.dxl_dtau_at_t(te);
    Qc[L] = E / (te - inst.t0);
    tec[L] = te;
    Ec[L] = E;
    rbc[L] = rb;
    xlec[L] = xle;
    dxlc[L] = dxl;
    Bf[L].resize(nx);
    C0f[L].resize(nx);
    lamf[L].resize(nx);
    laminhf[L].resize(nx);
    double bcoef = cache.b();
    for (int j = 0; j < nx; ++j) {
      double x = xg[L][j];
      double y = cache.y_of_x(x, te);
      double Bfull = E * (rb + y);
      switch (opts.killing) {
        case KillingForm::full: Bf[L][j] = Bfull; break;
        case KillingForm::rate_only: Bf[L][j] = E * rb; break;
        case KillingForm::off: Bf[L][j] = 0.0; break;
      }
      C0f[L][j] = Qc[L] * (rb + y);
      lamf[L][j] = (K / x) * ((1.0 - bcoef) * xle / (x * x) - dxl);
      laminhf[L][j] = lamf[L][j] - (xle / x) * K * Bf[L][j];
    }
  }

  double lambda_src(int L, int j) const {
    return opts.consistent_lambda ? lamf[L][j] : laminhf[L][j];
  }

  // Equation coefficients of level s at an arbitrary abscissa, mirroring
  // fill_coeffs/finalize_level. Only the boundary value is an interpolated
  // input; everything else is closed form, so sub-grid quadrature does not
  // inherit interpolation error from the steep drift profile near the floor.
  struct CoefPoint {
    double B, C0, cB, lB, lpsi;
  };

  CoefPoint coef_point(int s, double xi, double zb_i) const {
    CoefPoint c;
    double y = cache.y_of_x(xi, tec[s]);
    double B = 0.0;
    switch (opts.killing) {
      case KillingForm::full: B = Ec[s] * (rbc[s] + y); break;
      case KillingForm::rate_only: B = Ec[s] * rbc[s]; break;
      case KillingForm::off: B = 0.0; break;
    }
    c.B = B;
    c.C0 = Qc[s] * (rbc[s] + y);
    double lam = (K / xi) * ((1.0 - cache.b()) * xlec[s] / (xi * xi) - dxlc[s]);
    double laminh = lam - (xlec[s] / xi) * K * B;
    double lsrc = opts.consistent_lambda ? lam : laminh;
    c.cB = c.C0 - Qc[s] * zb_i;
    c.lB = lsrc - B * (K - zb_i) - c.cB;
    c.lpsi = opts.consistent_lambda ? lam - B * (K - zb_i) : laminh;
    return c;
  }

  void finalize_level(int L) {
    for (int k = 0; k < nx; ++k) {
      cB[L][k] = C0f[L][k] - Qc[L] * zb[L][k];
      lB[L][k] = lambda_src(L, k) - Bf[L][k] * (K - zb[L][k]) - cB[L][k];
      double lpsi_base = opts.consistent_lambda
                             ? lamf[L][k] - Bf[L][k] * (K - zb[L][k])
                             : laminhf[L][k];
      for (int q = 0; q < nz; ++q) {
        double Cq = C0f[L][k] - Qc[L] * zg[q];
        Dmat[L][static_cast<size_t>(k) * nz + q] =
            -Bf[L][k] * ub[L][k][q] + Cq * ubz[L][k][q] + cB[L][k];
        Pmat[L][static_cast<size_t>(k) * nz + q] =
            lpsi_base - Bf[L][k] * ub[L][k][q] + Cq * ubz[L][k][q];
      }
    }
  }

  void init_level0() {
    std::fill(zb[0].begin(), zb[0].end(), K);
    psib[0] = -K / xl[0];
    std::fill(psi[0].begin(), psi[0].end(), -K / xl[0]);
    // Both styles carry the whole-domain payoff data; the American solve
    // additionally projects each level onto the intrinsic value.
    for (int k = 0; k < nx; ++k)
      for (int q = 0; q < nz; ++q) {
        ub[0][k][q] = std::max(K - zg[q], 0.0);
        ubz[0][k][q] = zg[q] < K ? -1.0 : 0.0;
      }
    finalize_level(0);
  }

  // ---- z-direction ODE of the level update -------------------------------
  //
  // (1 + aB) ubar - a C(z) ubar_z = S(z),  C(z) = C0 - Q z,
  // S(z) = A(z) + a C_B.  Exact integrating-factor solution, evaluated in
  // ratio form with the sweep oriented away from the degenerate level
  // z* = C0/Q so every power ratio stays below one.

  struct OdeCtx {
    double a, B, C0, Q, cBv, m, p, zstar;
    const std::vector<double>* zgrid;
    const std::vector<double>* Arow;
    double S(double z) const { return lin_interp(*zgrid, *Arow, z) + a * cBv; }
    double C(double z) const { return C0 - Q * z; }
  };

  double ode_value(const OdeCtx& c, double zq, double zb_j) const {
    double Cq = c.C(zq);
    double scale = std::abs(c.C0) + c.Q * (zg.back() + 1.0) + 1e-300;
    if (std::abs(Cq) < 1e-10 * scale) return c.S(zq) / c.m;

    double anchor, ua;
    if (opts.stable_z_sweep) {
      // The boundary condition at z_B can only be imposed when z_B lies
      // between the target and the degenerate level z*; otherwise take the
      // bounded branch anchored at z* (zero weight) or the grid top.
      if (Cq < 0.0) {
        anchor = (c.zstar <= zb_j && zb_j <= zq) ? zb_j : c.zstar;
        ua = 0.0;
      } else if (zq <= zb_j && zb_j <= c.zstar) {
        anchor = zb_j;
        ua = 0.0;
      } else if (c.zstar <= zg.back()) {
        anchor = c.zstar;
        ua = 0.0;
      } else {
        anchor = zg.back();
        ua = c.S(anchor) / c.m;
      }
    } else {
      anchor = zb_j;
      ua = 0.0;
      double Ca = c.C(anchor);
      if (Ca * Cq <= 0.0) return 0.0;
      if (c.p * std::log(std::abs(Ca) / std::abs(Cq)) > 700.0) return 0.0;
    }
    if (anchor == zq) return ua;

    // Node path from anchor to zq along the z grid, with partial end segments.
    std::vector<double> path;
    path.push_back(anchor);
    if (anchor < zq) {
      for (double zn : zg)
        if (zn > anchor && zn < zq) path.push_back(zn);
    } else {
      for (auto it = zg.rbegin(); it != zg.rend(); ++it)
        if (*it < anchor && *it > zq) path.push_back(*it);
    }
    path.push_back(zq);

    double lnCq = std::log(std::abs(Cq));
    auto ratio_pow = [&](double z) {
      double Cz = std::abs(c.C(z));
      if (Cz <= 0.0) return 0.0;
      double e = c.p * (std::log(Cz) - lnCq);
      return e < -745.0 ? 0.0 : std::exp(e);
    };

    // 1/(pQ) = a/m and 1/(p(p+1)Q^2) = a^2/(m(m+aQ)) stay finite as Q -> 0.
    // The slope term integrates |C|^p dz, whose antiderivative flips sign with
    // C; the path never crosses z*, so sign(Cq) holds along all of it.
    double f1 = c.a / c.m;
    double f2 = (Cq > 0.0 ? 1.0 : -1.0) * c.a * c.a / (c.m * (c.m + c.a * c.Q));

    double acc = 0.0;
    double Sp_ = c.S(path[0]), Rp = ratio_pow(path[0]), Cp = std::abs(c.C(path[0]));
    for (size_t i = 1; i < path.size(); ++i) {
      double Sn = c.S(path[i]), Rn = ratio_pow(path[i]), Cn = std::abs(c.C(path[i]));
      double slope = (Sn - Sp_) / (path[i] - path[i - 1]);
      acc += (Sn * Rn - Sp_ * Rp) * f1 + slope * (Cn * Rn - Cp * Rp) * f2;
      Sp_ = Sn;
      Rp = Rn;
      Cp = Cn;
    }
    double Ra = ratio_pow(anchor);
    return ua * Ra + acc / c.a;
  }

  double ode_deriv(const OdeCtx& c, double zq, double ubar, int q) const {
    double Cq = c.C(zq);
    double scale = std::abs(c.C0) + c.Q * (zg.back() + 1.0) + 1e-300;
    if (std::abs(Cq) < 1e-8 * scale) {
      // L'Hopital across the degenerate level: ubar_z = S'/(m + aQ).
      double Az = grid_deriv(*c.Arow, q);
      return Az / (c.m + c.a * c.Q);
    }
    double v = (c.m * ubar - c.S(zq)) / (c.a * Cq);
    if (!std::isfinite(v)) return -1.0;
    return v;
  }

  double grid_deriv(const std::vector<double>& row, int q) const {
    if (q == 0) return (row[1] - row[0]) / (zg[1] - zg[0]);
    if (q == nz - 1) return (row[nz - 1] - row[nz - 2]) / (zg[nz - 1] - zg[nz - 2]);
    return (row[q + 1] - row[q - 1]) / (zg[q + 1] - zg[q - 1]);
  }

  // ---- one level of the recurrence ---------------------------------------

  void solve_level(int L, bool with_price) {
    const int m = L - 1;
    const double a = xl[L];
    const double amn = std::pow(a, -nu);
    const auto& XL = xg[L];
    std::vector<double> whist = grids::history_weights(m, dtau);

    std::vector<double> xmn(nx);
    for (int j = 0; j < nx; ++j) xmn[j] = std::pow(XL[j], -nu);

    std::vector<double> accZ(nx, 0.0), termB(nx, 0.0), T1(nx, 0.0);
    double accPb = 0.0, termBp = 0.0, T1p = 0.0;
    std::vector<double> accPsi(nz, 0.0);
    std::vector<double> accA(static_cast<size_t>(nx) * nz, 0.0);

    std::vector<double> thp(nx), trow(nx), wkick(nx);

    std::vector<double> fxi, fwt, fval;
    Brackets brk;

    for (int s = 0; s <= m; ++s) {
      double theta_s = tau[L] - tau[s];
      double sg = std::sqrt(theta_s);
      const auto& XS = xg[s];
      const auto& WS = wx[s];
      double weff = whist[s] + (s == m ? 0.5 * dtau : 0.0);
      if (weff == 0.0 && s != 0) continue;

      // The drift profile has a steep spike just above the floor; a grid row
      // may use it only when the first cells resolve that spike.
      bool spike_ok = grids::spacing_at(XS, 1.5 * XS[0]) <= 0.5 * XS[0];

      // Gradient-layer rows: the kernel flux derivative at the floor is a
      // dipole of width sqrt(theta); when the x grid cannot resolve the
      // dipole or the drift spike, the row is integrated on a dedicated
      // Simpson sub-grid with closed-form coefficients.
      double fluxP = 0.5 * xl_pow[s] * kernel.theta_prime(theta_s, a, XS[0], a);
      double sbp = 0.0, tbp = 0.0, t1pm = 0.0;
      std::vector<double> spq(nz, 0.0);
      if (spike_ok && sg >= 2.5 * grids::spacing_at(XS, a + sg)) {
        kernel.theta_prime_row(theta_s, a, XS, a, thp);
        for (int k = 0; k < nx; ++k) {
          double kw = opts.weighted_source_kernel ? amn * pow_nu1[s][k] : 1.0;
          sbp += WS[k] * kw * thp[k] * lB[s][k];
          for (int q = 0; q < nz; ++q)
            spq[q] += WS[k] * kw * thp[k] * Pmat[s][static_cast<size_t>(k) * nz + q];
          if (s == 0) {
            tbp += WS[k] * pow_nu[0][k] * thp[k];
            t1pm += WS[k] * pow_nu1[0][k] * thp[k];
          }
        }
      } else if (fine_nodes(std::max(XS[0], a - 12.0 * sg),
                            std::min(a + 12.0 * sg, grid.x_max), 128, fxi, fwt)) {
        kernel.theta_prime_row(theta_s, a, fxi, a, fval);
        brk.build(XS, fxi);
        for (size_t i = 0; i < fxi.size(); ++i) {
          double xi = fxi[i];
          size_t k0 = brk.idx[i];
          double f = brk.frac[i];
          double zb_i = (1.0 - f) * zb[s][k0] + f * zb[s][k0 + 1];
          CoefPoint cp = coef_point(s, xi, zb_i);
          double xn = std::pow(xi, nu);
          double kw = opts.weighted_source_kernel ? amn * xn * xi : 1.0;
          double base = fwt[i] * kw * fval[i];
          sbp += base * cp.lB;
          const double* u0 = ub[s][k0].data();
          const double* u1 = ub[s][k0 + 1].data();
          const double* g0 = ubz[s][k0].data();
          const double* g1 = ubz[s][k0 + 1].data();
          for (int q = 0; q < nz; ++q) {
            double ui = (1.0 - f) * u0[q] + f * u1[q];
            double gi = (1.0 - f) * g0[q] + f * g1[q];
            spq[q] += base * (cp.lpsi - cp.B * ui + (cp.C0 - Qc[s] * zg[q]) * gi);
          }
          if (s == 0) {
            tbp += fwt[i] * xn * fval[i];
            t1pm += fwt[i] * xn * xi * fval[i];
          }
        }
      }
      accPb += weff * (amn * fluxP * psib[s] + sbp);
      for (int q = 0; q < nz; ++q) accPsi[q] += weff * (amn * fluxP * psi[s][q] + spq[q]);
      if (s == 0) {
        termBp = -K * xl[0] * tbp;
        T1p = t1pm;
      }

      // Value-layer rows: Gaussian of width sqrt(theta) around each target.
      // Resolved targets use the grid trapezoid; unresolved targets clear of
      // the floor collapse onto the delta action of the kernel (exact mass
      // limits for the moment integrals); targets whose kernel reaches an
      // unresolved drift spike get the same sub-grid treatment as the
      // gradient rows.
      for (int j = 1; j < nx; ++j) {
        double v = XL[j];
        bool spike_near = !spike_ok && v - 10.0 * XS[0] <= 6.0 * sg;
        if (!spike_near && sg >= 2.5 * hx[j]) {
          kernel.theta_row(theta_s, v, XS, a, trow);
          for (int k = 0; k < nx; ++k) {
            double kw = opts.weighted_source_kernel ? xmn[j] * pow_nu1[s][k] : 1.0;
            wkick[k] = WS[k] * kw * trow[k];
          }
          double fb = 0.5 * xmn[j] * xl_pow[s] * psib[s] * trow[0];
          double sb = 0.0;
          for (int k = 0; k < nx; ++k) sb += wkick[k] * lB[s][k];
          accZ[j] += weff * (fb + sb);
          if (s == 0) {
            double tb = 0.0, t1 = 0.0;
            for (int k = 0; k < nx; ++k) {
              tb += WS[k] * pow_nu[0][k] * trow[k];
              t1 += WS[k] * pow_nu1[0][k] * trow[k];
            }
            termB[j] = -K * xl[0] * xmn[j] * tb;
            T1[j] = xmn[j] * t1;
          }
          if (!with_price) continue;
          double fluxfac = 0.5 * xmn[j] * xl_pow[s] * trow[0];
          for (int q = 0; q < nz; ++q) {
            double sd = 0.0;
            const double* Drow = Dmat[s].data() + q;
            for (int k = 0; k < nx; ++k) sd += wkick[k] * Drow[static_cast<size_t>(k) * nz];
            double fd2 = fluxfac * (psi[s][q] - psib[s]);
            accA[static_cast<size_t>(j) * nz + q] += weff * (sd + fd2);
          }
        } else if (!spike_near && v - a > 7.0 * sg) {
          double act = opts.weighted_source_kernel ? 1.0 : 1.0 / v;
          accZ[j] += weff * act * lB[s][j];
          if (s == 0) {
            termB[j] = -K * xl[0] / v;
            T1[j] = 1.0;
          }
          if (!with_price) continue;
          const double* Drow = Dmat[s].data() + static_cast<size_t>(j) * nz;
          for (int q = 0; q < nz; ++q)
            accA[static_cast<size_t>(j) * nz + q] += weff * act * Drow[q];
        } else {
          if (!fine_nodes(std::max(XS[0], v - 12.0 * sg),
                          std::min(v + 12.0 * sg, grid.x_max), 96, fxi, fwt))
            continue;
          kernel.theta_row(theta_s, v, fxi, a, fval);
          brk.build(XS, fxi);
          double sb = 0.0, tb = 0.0, t1 = 0.0;
          std::vector<double> sdq(nz, 0.0);
          for (size_t i = 0; i < fxi.size(); ++i) {
            double xi = fxi[i];
            size_t k0 = brk.idx[i];
            double f = brk.frac[i];
            double zb_i = (1.0 - f) * zb[s][k0] + f * zb[s][k0 + 1];
            CoefPoint cp = coef_point(s, xi, zb_i);
            double xn = std::pow(xi, nu);
            double kw = opts.weighted_source_kernel ? xmn[j] * xn * xi : 1.0;
            double base = fwt[i] * kw * fval[i];
            sb += base * cp.lB;
            if (s == 0) {
              tb += fwt[i] * xn * fval[i];
              t1 += fwt[i] * xn * xi * fval[i];
            }
            if (with_price) {
              const double* u0 = ub[s][k0].data();
              const double* u1 = ub[s][k0 + 1].data();
              const double* g0 = ubz[s][k0].data();
              const double* g1 = ubz[s][k0 + 1].data();
              for (int q = 0; q < nz; ++q) {
                double ui = (1.0 - f) * u0[q] + f * u1[q];
                double gi = (1.0 - f) * g0[q] + f * g1[q];
                sdq[q] += base * (cp.cB - cp.B * ui + (cp.C0 - Qc[s] * zg[q]) * gi);
              }
            }
          }
          double trow0 = kernel.theta(theta_s, v, XS[0], a);
          accZ[j] += weff * (0.5 * xmn[j] * xl_pow[s] * psib[s] * trow0 + sb);
          if (s == 0) {
            termB[j] = -K * xl[0] * xmn[j] * tb;
            T1[j] = xmn[j] * t1;
          }
          if (!with_price) continue;
          double fluxfac = 0.5 * xmn[j] * xl_pow[s] * trow0;
          for (int q = 0; q < nz; ++q)
            accA[static_cast<size_t>(j) * nz + q] +=
                weff * (sdq[q] + fluxfac * (psi[s][q] - psib[s]));
        }
      }
    }

    // Exercise boundary. The root of the value-matching equation may exceed
    // the strike where the averaging drift removes all continuation value in
    // z; the raw root is what keeps the source algebra of the value layer
    // consistent, so it is only boxed by the degenerate advection level.
    // Reporting clamps to the financially meaningful band [0, K].
    bool extrap = (L == N) && opts.extrapolate_boundary_at_t0;
    if (extrap) {
      for (int j = 0; j < nx; ++j) {
        double zmax = std::max(K, C0f[L][j] / Qc[L]);
        zb[L][j] = clamp(extrapolate3(zb[N - 3][j], zb[N - 2][j], zb[N - 1][j]), 0.0, zmax);
      }
    } else {
      for (int j = 1; j < nx; ++j) {
        double kap = opts.weighted_source_kernel ? 1.0 : 1.0 / XL[j];
        double num = K * (1.0 - a / XL[j]) - (accZ[j] + termB[j]) -
                     0.5 * dtau * kap * (lambda_src(L, j) - Bf[L][j] * K - C0f[L][j]);
        double den = 1.0 + 0.5 * dtau * kap * (Bf[L][j] + Qc[L]);
        double zmax = std::max(K, C0f[L][j] / Qc[L]);
        zb[L][j] = clamp(num / den, 0.0, zmax);
      }
    }
    zb[L][0] = 0.0;

    // Gradient at the moving boundary and over the z grid.
    psib[L] = -K / a + amn * termBp + accPb;
    for (int q = 0; q < nz; ++q) {
      double pay = std::max(K - zg[q], 0.0);
      psi[L][q] = -K / a + amn * (termBp + pay * T1p) + accPsi[q];
    }

    if (with_price) {
      std::vector<double> Arow(nz);
      for (int j = 0; j < nx; ++j) {
        for (int q = 0; q < nz; ++q) {
          double pay = std::max(K - zg[q], 0.0);
          Arow[q] = accA[static_cast<size_t>(j) * nz + q] + pay * T1[j];
        }
        if (j == 0) {
          for (int q = 0; q < nz; ++q) ub[L][0][q] = Arow[q];
          for (int q = 0; q < nz; ++q) ubz[L][0][q] = grid_deriv(ub[L][0], q);
        } else {
          OdeCtx c;
          c.a = opts.weighted_source_kernel ? 0.5 * dtau : 0.5 * dtau / XL[j];
          c.B = Bf[L][j];
          c.C0 = C0f[L][j];
          c.Q = Qc[L];
          c.cBv = C0f[L][j] - Qc[L] * zb[L][j];
          c.m = 1.0 + c.a * c.B;
          c.p = c.m / (c.a * c.Q);
          c.zstar = c.C0 / c.Q;
          c.zgrid = &zg;
          c.Arow = &Arow;
          if (!(c.m > 0.0))
            throw NumericalError("level update lost positivity in the killing factor");
          for (int q = 0; q < nz; ++q) {
            double u = ode_value(c, zg[q], zb[L][j]);
            ub[L][j][q] = u;
            ubz[L][j][q] = ode_deriv(c, zg[q], u, q);
          }
        }
        if (!euro) {
          for (int q = 0; q < nz; ++q) {
            double lift_gap = zb[L][j] - std::min(zg[q], K);
            ub[L][j][q] = std::max(ub[L][j][q], lift_gap);
            ubz[L][j][q] = std::max(ubz[L][j][q], -1.0);
          }
        }
        // Structural bounds of the true solution: the full price lies in
        // [0, K] so ubar in [z_B - K, z_B], and the average-delta in [-1, 0].
        // Committing history inside these bounds keeps the explicit source
        // feedback from amplifying grid-scale noise level over level.
        for (int q = 0; q < nz; ++q) {
          ub[L][j][q] = clamp(ub[L][j][q], zb[L][j] - K, zb[L][j]);
          ubz[L][j][q] = clamp(ubz[L][j][q], -1.0, 0.0);
        }
      }
    }

    finalize_level(L);

    for (int j = 0; j < nx; ++j)
      if (!std::isfinite(zb[L][j]))
        throw NumericalError("exercise boundary became non-finite");
    if (!std::isfinite(psib[L]))
      throw NumericalError("boundary gradient became non-finite");
    if (with_price)
      for (int j = 0; j < nx; ++j)
        for (int q = 0; q < nz; ++q)
          if (!std::isfinite(ub[L][j][q]) || !std::isfinite(ubz[L][j][q]))
            throw NumericalError("price surface became non-finite");
  }

  void run(bool with_price) {
    init_level0();
    for (int L = 1; L <= N; ++L) solve_level(L, with_price);
    boundary_only_done = true;
    full_done = with_price;
    publish();
  }

  void publish() {
    bnd.tau = tau;
    bnd.t = tt;
    bnd.x_l = xl;
    bnd.x = xg;
    bnd.z_b = zb;
    for (auto& row : bnd.z_b)
      for (double& v : row) v = std::min(v, K);
    bnd.psi_b.assign(N + 1, std::vector<double>(nx));
    for (int i = 0; i <= N; ++i) std::fill(bnd.psi_b[i].begin(), bnd.psi_b[i].end(), psib[i]);
    if (full_done) {
      cube.z = zg;
      cube.u_bar = ub;
      cube.u_bar_z = ubz;
    }
  }

  double boundary_in_x(int level, double x) const {
    interp::MonotoneCubic f(xg[level], zb[level]);
    return f(x);
  }

  double price_at(double y, double z) const {
    double x = cache.x_of_y(y, inst.t0);
    double zbx = boundary_in_x(N, x);
    if (!euro && z <= std::min(zbx, K)) return K - z;
    double v = ub_interp(ub, N, x, z) + (K - zbx);
    return euro ? v : std::max(v, std::max(K - z, 0.0));
  }

  double delta_z_at(double y, double z) const {
    double x = cache.x_of_y(y, inst.t0);
    double zbx = boundary_in_x(N, x);
    if (!euro && z <= std::min(zbx, K)) return -1.0;
    return ub_interp(ubz, N, x, z);
  }

  double ub_interp(const std::vector<std::vector<std::vector<double>>>& cubearr, int level,
                   double x, double z) const {
    // Monotone cubic across x at the two bracketing z nodes, linear in z.
    size_t qhi = 1;
    while (qhi < zg.size() - 1 && zg[qhi] < z) ++qhi;
    size_t qlo = qhi - 1;
    double t = clamp((z - zg[qlo]) / (zg[qhi] - zg[qlo]), 0.0, 1.0);
    std::vector<double> col(nx);
    for (int j = 0; j < nx; ++j) col[j] = cubearr[level][j][qlo];
    interp::MonotoneCubic flo(xg[level], col);
    for (int j = 0; j < nx; ++j) col[j] = cubearr[level][j][qhi];
    interp::MonotoneCubic fhi(xg[level], col);
    return (1.0 - t) * flo(x) + t * fhi(x);
  }

  double boundary_at(double t, double y) const {
    if (t < inst.t0 || t > inst.expiry) throw ConfigError("boundary query time outside [t0, T]");
    double tq = cache.tau_of_t(t);
    int hi = 1;
    while (hi < N && tau[hi] < tq) ++hi;
    int lo = hi - 1;
    double w = (tq - tau[lo]) / (tau[hi] - tau[lo]);
    double x = cache.x_of_y(y, t);
    double vlo = boundary_in_x(lo, x);
    double vhi = boundary_in_x(hi, x);
    return std::min((1.0 - w) * vlo + w * vhi, K);
  }
};

AsianEngine::AsianEngine(const term::ModelSpec& model, Instrument inst, GridSpec grid,
                         SchemeOptions opts)
    : impl_(std::make_unique<Impl>(model, inst, grid, opts)) {}

AsianEngine::~AsianEngine() = default;
AsianEngine::AsianEngine(AsianEngine&&) noexcept = default;
AsianEngine& AsianEngine::operator=(AsianEngine&&) noexcept = default;

void AsianEngine::solve_boundary() {
  if (!impl_->boundary_only_done) impl_->run(false);
}

void AsianEngine::solve() {
  if (!impl_->full_done) impl_->run(true);
}

const BoundarySolution& AsianEngine::boundary() const { return impl_->bnd; }
const PriceCube& AsianEngine::cube() const { return impl_->cube; }
const transforms::TransformCache& AsianEngine::cache() const { return impl_->cache; }
const Instrument& AsianEngine::instrument() const { return impl_->inst; }

double AsianEngine::price_at(double y, double z) const {
  if (!impl_->full_done) throw NumericalError("price query before solve()");
  return impl_->price_at(y, z);
}

double AsianEngine::delta_z_at(double y, double z) const {
  if (!impl_->full_done) throw NumericalError("gradient query before solve()");
  return impl_->delta_z_at(y, z);
}

double AsianEngine::boundary_at(double t, double y) const {
  if (!impl_->boundary_only_done) throw NumericalError("boundary query before solve_boundary()");
  return impl_->boundary_at(t, y);
}

double AsianEngine::spot_average_start() const { return impl_->spot_average_start(); }

}  // namespace sofrcev::asian
