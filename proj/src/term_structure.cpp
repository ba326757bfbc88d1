#include "term_structure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sofrcev::term {

ParamCurve::ParamCurve(double level)
    : kind_(Kind::constant_segments),
      knots_{0.0, std::numeric_limits<double>::max()},
      values_{level} {}

ParamCurve::ParamCurve(Kind kind, std::vector<double> knots, std::vector<double> values)
    : kind_(kind), knots_(std::move(knots)), values_(std::move(values)) {
  if (knots_.size() < 2) throw ConfigError("curve needs at least two knots");
  for (std::size_t i = 1; i < knots_.size(); ++i)
    if (!(knots_[i] > knots_[i - 1])) throw ConfigError("curve knots must be increasing");
  const std::size_t need =
      kind_ == Kind::constant_segments ? knots_.size() - 1 : knots_.size();
  if (values_.size() != need) throw ConfigError("curve knot/value count mismatch");
}

ParamCurve ParamCurve::piecewise_constant(std::vector<double> knots, std::vector<double> values) {
  return ParamCurve(Kind::constant_segments, std::move(knots), std::move(values));
}

ParamCurve ParamCurve::piecewise_linear(std::vector<double> knots, std::vector<double> values) {
  return ParamCurve(Kind::linear_segments, std::move(knots), std::move(values));
}

double ParamCurve::segment_value(std::size_t seg, double t) const {
  if (kind_ == Kind::constant_segments) return values_[seg];
  const double t0 = knots_[seg], t1 = knots_[seg + 1];
  const double w = (t - t0) / (t1 - t0);
  return (1.0 - w) * values_[seg] + w * values_[seg + 1];
}

double ParamCurve::operator()(double t) const {
  t = std::clamp(t, knots_.front(), knots_.back());
  auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  std::size_t seg = (it == knots_.begin()) ? 0 : static_cast<std::size_t>(it - knots_.begin()) - 1;
  if (seg + 2 > knots_.size()) seg = knots_.size() - 2;
  return segment_value(seg, t);
}

double ParamCurve::integral(double a, double b) const {
  if (a == b) return 0.0;
  if (a > b) return -integral(b, a);
  double acc = 0.0;
  // Clamped extension: values outside the knot range are the edge values.
  const double lo = knots_.front(), hi = knots_.back();
  if (a < lo) {
    acc += (std::min(b, lo) - a) * (*this)(lo);
    a = lo;
    if (a >= b) return acc;
  }
  if (b > hi) {
    acc += (b - std::max(a, hi)) * (*this)(hi);
    b = hi;
    if (a >= b) return acc;
  }
  auto it = std::upper_bound(knots_.begin(), knots_.end(), a);
  std::size_t seg = (it == knots_.begin()) ? 0 : static_cast<std::size_t>(it - knots_.begin()) - 1;
  if (seg + 2 > knots_.size()) seg = knots_.size() - 2;
  while (a < b) {
    const double end = std::min(b, knots_[seg + 1]);
    // Trapezoid is exact for a linear segment, and for a constant one.
    acc += 0.5 * (segment_value(seg, a) + segment_value(seg, end)) * (end - a);
    a = end;
    ++seg;
    if (seg + 1 >= knots_.size()) break;
  }
  return acc;
}

bool ParamCurve::is_constant() const {
  const double v0 = kind_ == Kind::constant_segments ? values_.front() : values_.front();
  for (double v : values_)
    if (v != v0) return false;
  return true;
}

std::vector<double> ParamCurve::breakpoints_between(double a, double b) const {
  std::vector<double> out;
  for (double k : knots_)
    if (k > a && k < b) out.push_back(k);
  return out;
}

double ParamCurve::min_value() const {
  return *std::min_element(values_.begin(), values_.end());
}

double ParamCurve::max_value() const {
  return *std::max_element(values_.begin(), values_.end());
}

void ModelSpec::validate() const {
  if (!(beta >= -1.0 && beta < 0.0))
    throw ConfigError("beta must lie in [-1, 0)");
  if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
  if (!(sigma.min_value() > 0.0))
    throw ConfigError("sigma must be strictly positive on [0, horizon]");
}

double y_lower(const ModelSpec& m, double t) { return std::max(-m.rbar_star(t), 0.0); }

double y_lower_derivative(const ModelSpec& m, double t) {
  if (y_lower(m, t) == 0.0) return 0.0;
  if (m.rbar_star.kind() == ParamCurve::Kind::constant_segments) return 0.0;
  const double h = 1e-7;
  return (y_lower(m, t + h) - y_lower(m, t)) / h;
}

}  // namespace sofrcev::term
