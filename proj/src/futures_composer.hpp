#pragma once

#include <cstddef>
#include <vector>

#include "asian_engine.hpp"
#include "term_structure.hpp"

namespace sofrcev::futures {

// Arithmetic average of daily rates weighted by their calendar coverage:
// R_A = [sum r_i n_i / N] * (N / d_c), with sum n_i required to equal d_c.
double simple_average_rate(const std::vector<double>& rates, const std::vector<double>& days,
                           double year_days, double calendar_days);

// Compounded period rate (prod(1 + d_i r_i) - 1) / sum d_i.
double compounded_rate_discrete(const std::vector<double>& accruals,
                                const std::vector<double>& rates);

// Continuous stand-in (exp(sum d_i r_i) - 1) / sum d_i.
double compounded_rate_continuous(const std::vector<double>& accruals,
                                  const std::vector<double>& rates);

// Realized prefix factors times the (externally supplied) expectation of the
// factor over the unrealized remainder: (prefix * remaining_factor - 1) / period.
double partially_accrued_rate(const std::vector<double>& accruals,
                              const std::vector<double>& rates, std::size_t realized,
                              double remaining_factor, double period);

double quote_from_rate(double rate);

// Month-start decision value: the larger of immediate exercise against the
// one-month futures rate and the Asian continuation value.
double combined_payoff(double strike, double f1m, double asian_value);

// Expected arithmetic average of the rate over [t0, T] started at r(t0) = chi,
// with y following its drift-only flow.
double one_month_rate(const term::ModelSpec& model, double t0, double T, double chi);

// exp(-int_{t_a}^{t_b} [rbar*(s) + y_det(s)] ds) along the drift flow from y_a.
double deterministic_discount(const term::ModelSpec& model, double t_a, double t_b, double y_a);

struct OneMonthPutSpec {
  double strike = 0.02;
  double valuation_time = 0.0;
  double month_start = 0.25;
  double month_end = 0.25 + 1.0 / 12.0;
  double y_spot = 0.03;  // y at valuation_time
};

struct OneMonthPutResult {
  double price = 0.0;
  double density_mass = 0.0;
  bool point_mass = false;
};

// Pre-month valuation of the 1M option: quadrature of the rate density at the
// month start against the max of intrinsic-on-forward and the Asian-American
// continuation value, discounted along the deterministic curve.
OneMonthPutResult price_one_month_put(const term::ModelSpec& model, const OneMonthPutSpec& spec,
                                      asian::GridSpec agrid = {}, asian::SchemeOptions opts = {},
                                      int chi_nodes = 161, int density_steps = 64);

}  // namespace sofrcev::futures
