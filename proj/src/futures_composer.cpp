#include "futures_composer.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "bond_forward.hpp"
#include "errors.hpp"
#include "grids.hpp"

namespace sofrcev::futures {

namespace {

void check_path(const std::vector<double>& accruals, const std::vector<double>& rates) {
  if (accruals.empty()) throw ConfigError("compounding path is empty");
  if (accruals.size() != rates.size())
    throw ConfigError("accrual and rate arrays differ in length");
  for (double d : accruals)
    if (!(d > 0.0)) throw ConfigError("accrual fractions must be positive");
}

// int_a^b exp(-int_a^s alpha du) ds, exact on constant alpha segments.
double drift_flow_integral(const term::ModelSpec& model, double a, double b) {
  const auto& alpha = model.alpha;
  std::vector<double> cuts = alpha.breakpoints_between(a, b);
  cuts.push_back(b);
  double acc = 0.0;
  double p = a;
  for (double q : cuts) {
    if (!(q > p)) continue;
    const double A0 = alpha.integral(a, p);
    if (alpha.kind() == term::ParamCurve::Kind::constant_segments) {
      const double al = alpha(0.5 * (p + q));
      const double len = q - p;
      const double seg = (std::abs(al) < 1e-14) ? len : -std::expm1(-al * len) / al;
      acc += std::exp(-A0) * seg;
    } else {
      // Linear alpha on the segment: 16-point Gauss-Legendre is ample for
      // exp(-quadratic).
      static const std::array<double, 8> gx = {0.0950125098376374, 0.2816035507792589,
                                               0.4580167776572274, 0.6178762444026438,
                                               0.7554044083550030, 0.8656312023878318,
                                               0.9445750230732326, 0.9894009349916499};
      static const std::array<double, 8> gw = {0.1894506104550685, 0.1826034150449236,
                                               0.1691565193950025, 0.1495959888165767,
                                               0.1246289712555339, 0.0951585116824928,
                                               0.0622535239386479, 0.0271524594117541};
      const double c = 0.5 * (p + q), hl = 0.5 * (q - p);
      for (int i = 0; i < 8; ++i) {
        for (double sgn : {-1.0, 1.0}) {
          const double s = c + sgn * hl * gx[i];
          acc += gw[i] * hl * std::exp(-alpha.integral(a, s));
        }
      }
    }
    p = q;
  }
  return acc;
}

}  // namespace

double simple_average_rate(const std::vector<double>& rates, const std::vector<double>& days,
                           double year_days, double calendar_days) {
  check_path(days, rates);
  if (!(year_days > 0.0) || !(calendar_days > 0.0))
    throw ConfigError("day counts must be positive");
  double total_days = 0.0, weighted = 0.0;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    total_days += days[i];
    weighted += rates[i] * days[i] / year_days;
  }
  if (std::abs(total_days - calendar_days) > 1e-9 * std::max(1.0, calendar_days))
    throw ConfigError("rate coverage does not add up to the calendar day count");
  return weighted * (year_days / calendar_days);
}

double compounded_rate_discrete(const std::vector<double>& accruals,
                                const std::vector<double>& rates) {
  check_path(accruals, rates);
  double prod = 1.0, total = 0.0;
  for (std::size_t i = 0; i < accruals.size(); ++i) {
    const double f = 1.0 + accruals[i] * rates[i];
    if (f < 0.0) throw ConfigError("negative compounding factor 1 + d_i r_i");
    prod *= f;
    total += accruals[i];
  }
  return (prod - 1.0) / total;
}

double compounded_rate_continuous(const std::vector<double>& accruals,
                                  const std::vector<double>& rates) {
  check_path(accruals, rates);
  double expo = 0.0, total = 0.0;
  for (std::size_t i = 0; i < accruals.size(); ++i) {
    expo += accruals[i] * rates[i];
    total += accruals[i];
  }
  return std::expm1(expo) / total;
}

double partially_accrued_rate(const std::vector<double>& accruals,
                              const std::vector<double>& rates, std::size_t realized,
                              double remaining_factor, double period) {
  if (realized > accruals.size() || accruals.size() != rates.size())
    throw ConfigError("realized prefix exceeds the supplied path");
  if (!(period > 0.0)) throw ConfigError("accrual period must be positive");
  if (!(remaining_factor > 0.0)) throw ConfigError("remaining factor must be positive");
  double prefix = 1.0;
  for (std::size_t i = 0; i < realized; ++i) {
    const double f = 1.0 + accruals[i] * rates[i];
    if (f < 0.0) throw ConfigError("negative compounding factor 1 + d_i r_i");
    prefix *= f;
  }
  return (prefix * remaining_factor - 1.0) / period;
}

double quote_from_rate(double rate) { return 100.0 * (1.0 - rate); }

double combined_payoff(double strike, double f1m, double asian_value) {
  return std::max(strike - f1m, std::max(asian_value, 0.0));
}

double one_month_rate(const term::ModelSpec& model, double t0, double T, double chi) {
  if (!(T > t0)) throw ConfigError("averaging window must have positive length");
  const double y0 = chi - model.rbar_star(t0);
  const double base = model.rbar_star.integral(t0, T);
  return (base + y0 * drift_flow_integral(model, t0, T)) / (T - t0);
}

double deterministic_discount(const term::ModelSpec& model, double t_a, double t_b, double y_a) {
  if (!(t_b >= t_a)) throw ConfigError("discount window is reversed");
  if (t_b == t_a) return 1.0;
  const double base = model.rbar_star.integral(t_a, t_b);
  return std::exp(-(base + y_a * drift_flow_integral(model, t_a, t_b)));
}

OneMonthPutResult price_one_month_put(const term::ModelSpec& model, const OneMonthPutSpec& spec,
                                      asian::GridSpec agrid, asian::SchemeOptions opts,
                                      int chi_nodes, int density_steps) {
  model.validate();
  if (!(spec.strike > 0.0)) throw ConfigError("strike must be positive");
  if (!(spec.valuation_time <= spec.month_start) || !(spec.month_start < spec.month_end))
    throw ConfigError("need valuation_time <= month_start < month_end");

  const double t0 = spec.month_start, T = spec.month_end, K = spec.strike;
  const double rb0 = model.rbar_star(t0);
  const bool at_start = (t0 - spec.valuation_time) < 1e-12;

  // Rate distribution at the month start.
  bond::TransitionDensity::Sample dens;
  if (at_start) {
    dens.point_mass = true;
    dens.mass = 1.0;
    dens.y_point = spec.y_spot;
  } else {
    bond::TransitionDensity td(model, spec.valuation_time, t0, spec.y_spot, density_steps);
    dens = td.sample(chi_nodes);
  }
  if (!dens.point_mass && std::abs(dens.mass - 1.0) > 1e-3)
    throw NumericalError("month-start rate density mass deviates from 1 beyond 1e-3");

  const double y_anchor = dens.point_mass ? dens.y_point
                                          : dens.y[(dens.y.size() - 1) / 2];
  const double y_hi = dens.point_mass ? dens.y_point : dens.y.back();

  asian::Instrument inst;
  inst.strike = K;
  inst.t0 = t0;
  inst.expiry = T;
  inst.y_spot = y_anchor;
  inst.style = asian::ExerciseStyle::american;

  if (agrid.z_top <= 0.0) agrid.z_top = 1.05 * std::max(K, rb0 + y_hi);
  if (agrid.x_max <= 0.0) {
    transforms::TransformCache probe(model, T, t0);
    const double x_hi = probe.x_of_y(std::max(y_hi, y_anchor), t0);
    agrid.x_max = std::max(8.0 * x_hi, 2.5 * probe.max_x_l());
  }

  asian::AsianEngine engine(model, inst, agrid, opts);
  engine.solve();

  const double disc = model.discounting_enabled
                          ? deterministic_discount(model, spec.valuation_time, t0, spec.y_spot)
                          : 1.0;

  OneMonthPutResult out;
  out.point_mass = dens.point_mass;
  out.density_mass = dens.mass;
  if (dens.point_mass) {
    const double chi = rb0 + dens.y_point;
    const double cont = engine.price_at(dens.y_point, chi);
    out.price = disc * combined_payoff(K, one_month_rate(model, t0, T, chi), cont);
    return out;
  }

  std::vector<double> w = grids::trapezoid_weights(dens.y);
  double acc = 0.0;
  for (std::size_t i = 0; i < dens.y.size(); ++i) {
    const double chi = rb0 + dens.y[i];
    const double cont = engine.price_at(dens.y[i], chi);
    acc += w[i] * dens.q_y[i] * combined_payoff(K, one_month_rate(model, t0, T, chi), cont);
  }
  out.price = disc * acc;
  return out;
}

}  // namespace sofrcev::futures
