#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "ddsm/forward.hpp"

namespace testing_support {

using namespace ddsm;

// Normal derivative of a smooth u on the square loop; corners take the
// average of the two adjacent sides.
inline BoundaryTrace normal_derivative(const std::shared_ptr<const BoundaryLoop>& loop,
                                       const std::function<Point(Point)>& grad) {
  BoundaryTrace t(loop);
  for (std::size_t m = 0; m < loop->size(); ++m) {
    const Point p = loop->points[m];
    const Point g = grad(p);
    const bool ex = std::abs(std::abs(p.x1) - 1) < 1e-12, ey = std::abs(std::abs(p.x2) - 1) < 1e-12;
    const double gx = g.x1 * (p.x1 > 0 ? 1 : -1), gy = g.x2 * (p.x2 > 0 ? 1 : -1);
    t.values[m] = ex && ey ? 0.5 * (gx + gy) : ex ? gx : gy;
  }
  return t;
}

// Relative L2 error of a Neumann solution against exact u after removing
// the grid mean of both.
inline double mean_adjusted_error(const ScalarField& uh, const std::function<double(Point)>& u) {
  const auto& g = uh.grid;
  double mean = 0;
  for (std::size_t k = 0; k < g.size(); ++k) mean += u(g.node(k));
  mean /= static_cast<double>(g.size());
  double e = 0, n = 0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double ex = u(g.node(k)) - mean;
    e += (uh.values[k] - ex) * (uh.values[k] - ex);
    n += ex * ex;
  }
  return std::sqrt(e / n);
}

struct Manufactured {
  std::function<double(Point)> u;
  std::function<Point(Point)> grad;
};

inline Manufactured saddle() {
  return {[](Point p) { return p.x1 * p.x1 - p.x2 * p.x2; }, [](Point p) { return Point{2 * p.x1, -2 * p.x2}; }};
}

inline Manufactured exp_cos() {
  return {[](Point p) { return std::exp(p.x1) * std::cos(p.x2); },
          [](Point p) { return Point{std::exp(p.x1) * std::cos(p.x2), -std::exp(p.x1) * std::sin(p.x2)}; }};
}

inline double manufactured_error(std::size_t n, const Manufactured& m, double tol = 1e-13) {
  const auto g = CartesianGrid::square(n);
  const auto dom = Domain::square(g);
  const auto op = DiffusionOperator::laplacian(dom);
  const BoundaryTrace data = centered(normal_derivative(dom->loop(), m.grad));
  SolverConfig cfg;
  cfg.tolerance = tol;
  return mean_adjusted_error(solve_neumann(op, data, cfg), m.u);
}

template <class Rng>
BoundaryTrace random_trace(const std::shared_ptr<const BoundaryLoop>& loop, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  BoundaryTrace t(loop);
  for (auto& v : t.values) v = n(rng);
  return t;
}

}  // namespace testing_support
