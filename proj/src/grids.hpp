#pragma once

#include <cstddef>
#include <vector>

#include "errors.hpp"

namespace sofrcev::grids {

// Nonuniform nodes on [lo, hi] distributed by an inverse-CDF of a two-sided
// hyperbolic-sine cluster density: a strong cluster at `focus` (strength
// a_focus) and a weaker one at the lower end (strength a_lo). Endpoints are
// included exactly and nodes are strictly increasing.
std::vector<double> sinh_cluster_nodes(double lo, double hi, double focus, std::size_t count,
                                       double a_focus = 5.0, double a_lo = 2.0);

std::vector<double> uniform_nodes(double lo, double hi, std::size_t count);

// Trapezoid weights for samples on arbitrary ordered nodes.
std::vector<double> trapezoid_weights(const std::vector<double>& nodes);

// Quadrature weights over uniformly spaced history levels 0..m with spacing
// dtau: composite Simpson when the panel count is even, otherwise a single
// trapezoid panel at the front followed by Simpson. m = 0 returns {0}.
std::vector<double> history_weights(std::size_t m, double dtau);

// Spacing diagnostics used by grid property tests.
double min_spacing(const std::vector<double>& nodes);
double mean_spacing(const std::vector<double>& nodes);
double spacing_at(const std::vector<double>& nodes, double where);

}  // namespace sofrcev::grids
