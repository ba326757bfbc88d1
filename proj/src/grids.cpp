#include "grids.hpp"

#include <algorithm>
#include <cmath>

namespace sofrcev::grids {

std::vector<double> sinh_cluster_nodes(double lo, double hi, double focus, std::size_t count,
                                       double a_focus, double a_lo) {
  if (!(hi > lo)) throw ConfigError("grid needs hi > lo");
  if (count < 4) throw ConfigError("grid needs at least 4 nodes");
  focus = std::clamp(focus, lo, hi);
  const double L = hi - lo;
  const double s_focus = L / 50.0;
  const double s_lo = L / 200.0;
  auto density = [&](double x) {
    const double df = (x - focus) / s_focus;
    const double dl = (x - lo) / s_lo;
    return 1.0 + a_focus / std::sqrt(1.0 + df * df) + a_lo / std::sqrt(1.0 + dl * dl);
  };
  const std::size_t fine = 8192;
  std::vector<double> xs(fine + 1), cdf(fine + 1);
  for (std::size_t i = 0; i <= fine; ++i) xs[i] = lo + L * static_cast<double>(i) / fine;
  cdf[0] = 0.0;
  for (std::size_t i = 1; i <= fine; ++i)
    cdf[i] = cdf[i - 1] + 0.5 * (density(xs[i - 1]) + density(xs[i])) * (xs[i] - xs[i - 1]);

  std::vector<double> nodes(count);
  nodes.front() = lo;
  nodes.back() = hi;
  std::size_t j = 0;
  for (std::size_t k = 1; k + 1 < count; ++k) {
    const double target = cdf.back() * static_cast<double>(k) / (count - 1);
    while (j + 1 < fine && cdf[j + 1] < target) ++j;
    const double t = (target - cdf[j]) / (cdf[j + 1] - cdf[j]);
    nodes[k] = xs[j] + t * (xs[j + 1] - xs[j]);
  }
  for (std::size_t k = 1; k < count; ++k)
    if (!(nodes[k] > nodes[k - 1])) throw NumericalError("cluster map produced non-monotone nodes");
  return nodes;
}

std::vector<double> uniform_nodes(double lo, double hi, std::size_t count) {
  if (count < 2) throw ConfigError("grid needs at least 2 nodes");
  std::vector<double> nodes(count);
  for (std::size_t i = 0; i < count; ++i)
    nodes[i] = lo + (hi - lo) * static_cast<double>(i) / (count - 1);
  nodes.back() = hi;
  return nodes;
}

std::vector<double> trapezoid_weights(const std::vector<double>& nodes) {
  const std::size_t n = nodes.size();
  std::vector<double> w(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double h = nodes[i + 1] - nodes[i];
    w[i] += 0.5 * h;
    w[i + 1] += 0.5 * h;
  }
  return w;
}

std::vector<double> history_weights(std::size_t m, double dtau) {
  std::vector<double> w(m + 1, 0.0);
  if (m == 0) return w;
  if (m == 1) {
    w[0] = w[1] = 0.5 * dtau;
    return w;
  }
  std::size_t start = 0;
  if (m % 2 == 1) {
    // Odd panel count: one trapezoid panel at the front keeps the Simpson
    // block adjacent to the most recent levels where kernels vary fastest.
    w[0] += 0.5 * dtau;
    w[1] += 0.5 * dtau;
    start = 1;
  }
  for (std::size_t i = start; i + 2 <= m; i += 2) {
    w[i] += dtau / 3.0;
    w[i + 1] += 4.0 * dtau / 3.0;
    w[i + 2] += dtau / 3.0;
  }
  return w;
}

double min_spacing(const std::vector<double>& nodes) {
  double m = nodes[1] - nodes[0];
  for (std::size_t i = 1; i + 1 < nodes.size(); ++i) m = std::min(m, nodes[i + 1] - nodes[i]);
  return m;
}

double mean_spacing(const std::vector<double>& nodes) {
  return (nodes.back() - nodes.front()) / static_cast<double>(nodes.size() - 1);
}

double spacing_at(const std::vector<double>& nodes, double where) {
  auto it = std::upper_bound(nodes.begin(), nodes.end(), where);
  if (it == nodes.begin()) return nodes[1] - nodes[0];
  if (it == nodes.end()) return nodes[nodes.size() - 1] - nodes[nodes.size() - 2];
  const std::size_t i = static_cast<std::size_t>(it - nodes.begin());
  return nodes[i] - nodes[i - 1];
}

}  // namespace sofrcev::grids
