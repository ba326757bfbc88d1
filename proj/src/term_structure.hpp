#pragma once

#include <string>
#include <vector>

#include "errors.hpp"

namespace sofrcev::term {

// Deterministic model parameter curve on [0, horizon]. Piecewise constant or
// piecewise linear between knots; evaluation clamps outside the knot range.
class ParamCurve {
 public:
  enum class Kind { constant_segments, linear_segments };

  ParamCurve() : ParamCurve(0.0) {}
  explicit ParamCurve(double level);
  static ParamCurve piecewise_constant(std::vector<double> knots, std::vector<double> values);
  static ParamCurve piecewise_linear(std::vector<double> knots, std::vector<double> values);

  double operator()(double t) const;
  // Exact integral over [a, b] (signed). Piecewise segments are integrated in
  // closed form, so no quadrature error accumulates.
  double integral(double a, double b) const;
  bool is_constant() const;
  // Ordered breakpoints restricted to (a, b); used by callers that integrate
  // expressions of several curves segment by segment.
  std::vector<double> breakpoints_between(double a, double b) const;

  double min_value() const;
  double max_value() const;
  Kind kind() const { return kind_; }

 private:
  ParamCurve(Kind kind, std::vector<double> knots, std::vector<double> values);
  double segment_value(std::size_t seg, double t) const;

  Kind kind_ = Kind::constant_segments;
  std::vector<double> knots_;   // size n+1, increasing
  std::vector<double> values_;  // constant: size n (per segment); linear: size n+1 (per knot)
};

// Short-rate model: r(t) = rbar_star(t) + y_t,
// dy = -alpha(t) y dt + sigma(t) y^(beta+1) dW, beta in [-1, 0).
struct ModelSpec {
  double beta = -1.0;
  ParamCurve alpha;
  ParamCurve sigma;
  ParamCurve rbar_star;
  double horizon = 1.0;
  bool discounting_enabled = true;

  // Throws ConfigError if any documented precondition fails.
  void validate() const;
};

// Lower boundary of the state: y_l(t) = max(-rbar_star(t), 0), the reflection
// level that keeps r(t) = rbar_star(t) + y_t non-negative.
double y_lower(const ModelSpec& m, double t);

// d/dt of y_lower, one-sided from the right at curve breakpoints.
double y_lower_derivative(const ModelSpec& m, double t);

}  // namespace sofrcev::term
