#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "ddsm/error.hpp"

namespace ddsm {

struct Point {
  double x1 = 0.0;
  double x2 = 0.0;

  friend Point operator+(Point a, Point b) { return {a.x1 + b.x1, a.x2 + b.x2}; }
  friend Point operator-(Point a, Point b) { return {a.x1 - b.x1, a.x2 - b.x2}; }
  friend Point operator*(double s, Point a) { return {s * a.x1, s * a.x2}; }
  friend bool operator==(Point a, Point b) = default;
};

inline double dot(Point a, Point b) { return a.x1 * b.x1 + a.x2 * b.x2; }
inline double norm(Point a) { return std::hypot(a.x1, a.x2); }

// Node-based Cartesian discretization of a rectangle, [-1,1]^2 by default.
// Node (i,j) has flat index j*n1 + i, so x1 runs fastest.
struct CartesianGrid {
  std::size_t n1 = 64;
  std::size_t n2 = 64;
  double lo1 = -1.0, hi1 = 1.0;
  double lo2 = -1.0, hi2 = 1.0;

  static CartesianGrid square(std::size_t n) {
    CartesianGrid g;
    g.n1 = n;
    g.n2 = n;
    g.validate();
    return g;
  }

  void validate() const {
    if (n1 < 3 || n2 < 3) throw ConfigError("grid needs at least 3 nodes per direction");
    if (!(hi1 > lo1) || !(hi2 > lo2)) throw ConfigError("grid bounds are empty");
  }

  double h1() const { return (hi1 - lo1) / static_cast<double>(n1 - 1); }
  double h2() const { return (hi2 - lo2) / static_cast<double>(n2 - 1); }
  std::size_t size() const { return n1 * n2; }
  std::size_t index(std::size_t i, std::size_t j) const { return j * n1 + i; }
  Point node(std::size_t i, std::size_t j) const {
    return {lo1 + static_cast<double>(i) * h1(), lo2 + static_cast<double>(j) * h2()};
  }
  Point node(std::size_t k) const { return node(k % n1, k / n1); }

  friend bool operator==(const CartesianGrid&, const CartesianGrid&) = default;
};

struct Circle {
  Point center;
  double radius = 0.0;
};

struct Ellipse {
  Point center;
  double semi_major = 0.0;
  double semi_minor = 0.0;
  double rotation = 0.0;  // radians, in [0, 2pi)
};

using Shape = std::variant<Circle, Ellipse>;

inline Point shape_center(const Shape& s) {
  return std::visit([](const auto& v) { return v.center; }, s);
}

// Half extents of the axis-aligned bounding box of a shape.
inline Point shape_half_extent(const Shape& s) {
  if (const auto* c = std::get_if<Circle>(&s)) return {c->radius, c->radius};
  const auto& e = std::get<Ellipse>(s);
  const double ct = std::cos(e.rotation), st = std::sin(e.rotation);
  const double a2 = e.semi_major * e.semi_major, b2 = e.semi_minor * e.semi_minor;
  return {std::sqrt(a2 * ct * ct + b2 * st * st), std::sqrt(a2 * st * st + b2 * ct * ct)};
}

// Signed level set: negative inside, positive outside, zero on the curve.
// Circles use |x - c| - r. Ellipses use min(a,b) * (sqrt(q) - 1) with q the
// rotated quadratic form, which is exact along the minor axis.
inline double level_set(const Shape& shape, Point x) {
  if (const auto* c = std::get_if<Circle>(&shape)) return norm(x - c->center) - c->radius;
  const auto& e = std::get<Ellipse>(shape);
  const Point r = x - e.center;
  const double ct = std::cos(e.rotation), st = std::sin(e.rotation);
  const double u = ct * r.x1 + st * r.x2;
  const double v = -st * r.x1 + ct * r.x2;
  const double q = (u * u) / (e.semi_major * e.semi_major) + (v * v) / (e.semi_minor * e.semi_minor);
  return std::min(e.semi_major, e.semi_minor) * (std::sqrt(q) - 1.0);
}

struct ConductivitySample {
  std::vector<Shape> shapes;
  double sigma_inclusion = 10.0;
  double sigma_background = 1.0;

  void validate() const {
    if (!(sigma_inclusion > 0.0) || !(sigma_background > 0.0))
      throw ConfigError("conductivities must be strictly positive");
    for (const auto& s : shapes) {
      if (const auto* c = std::get_if<Circle>(&s)) {
        if (!(c->radius > 0.0)) throw ConfigError("circle radius must be positive");
      } else {
        const auto& e = std::get<Ellipse>(s);
        if (!(e.semi_major > 0.0) || !(e.semi_minor > 0.0))
          throw ConfigError("ellipse axes must be positive");
      }
    }
  }
};

// Level set of the union of all shapes: the pointwise minimum.
inline double union_level_set(const ConductivitySample& sample, Point x) {
  if (sample.shapes.empty()) throw ConfigError("union level set of an empty shape list");
  double c = level_set(sample.shapes.front(), x);
  for (std::size_t i = 1; i < sample.shapes.size(); ++i) c = std::min(c, level_set(sample.shapes[i], x));
  return c;
}

inline bool inside_inclusion(const ConductivitySample& sample, Point x) {
  return !sample.shapes.empty() && union_level_set(sample, x) < 0.0;
}

// Shapes must stay inside the margin box (-0.9,0.9)^2, i.e. at distance >= 0.1
// from the boundary of [-1,1]^2.
inline constexpr double kMarginBox = 0.9;
inline constexpr int kResampleBudget = 1000;

inline bool within_margin(const Shape& s) {
  const Point c = shape_center(s);
  const Point w = shape_half_extent(s);
  return std::abs(c.x1) + w.x1 <= kMarginBox && std::abs(c.x2) + w.x2 <= kMarginBox;
}

// Random inclusion configurations for the three benchmark scenarios:
//   1: 3 circles, radius ~ U(0.2,0.4)
//   2: 5 circles, radius ~ U(0.2,0.3)
//   3: 4 ellipses, semi-minor ~ U(0.1,0.2), semi-major ~ U(0.2,0.4), rotation ~ U(0,2pi)
// Centers are uniform in the margin box; shapes may overlap. A shape that
// leaves the margin box is redrawn as a whole.
template <class Rng>
ConductivitySample sample_scenario(int scenario, Rng& rng) {
  if (scenario < 1 || scenario > 3) throw ConfigError("scenario must be 1, 2 or 3");
  std::uniform_real_distribution<double> center(-kMarginBox, kMarginBox);
  const std::size_t count = scenario == 1 ? 3 : scenario == 2 ? 5 : 4;

  ConductivitySample sample;
  for (std::size_t n = 0; n < count; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < kResampleBudget && !placed; ++attempt) {
      const Point c{center(rng), center(rng)};
      Shape s;
      if (scenario == 1) {
        s = Circle{c, std::uniform_real_distribution<double>(0.2, 0.4)(rng)};
      } else if (scenario == 2) {
        s = Circle{c, std::uniform_real_distribution<double>(0.2, 0.3)(rng)};
      } else {
        const double minor = std::uniform_real_distribution<double>(0.1, 0.2)(rng);
        const double major = std::uniform_real_distribution<double>(0.2, 0.4)(rng);
        const double rot = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
        s = Ellipse{c, major, minor, rot};
      }
      if (within_margin(s)) {
        sample.shapes.push_back(s);
        placed = true;
      }
    }
    if (!placed) throw NumericalError("shape resampling budget exhausted");
  }
  return sample;
}

struct ScalarField {
  CartesianGrid grid;
  std::vector<double> values;

  ScalarField() = default;
  explicit ScalarField(const CartesianGrid& g, double fill = 0.0) : grid(g), values(g.size(), fill) {}
  double& operator()(std::size_t i, std::size_t j) { return values[grid.index(i, j)]; }
  double operator()(std::size_t i, std::size_t j) const { return values[grid.index(i, j)]; }
};

struct VectorField {
  CartesianGrid grid;
  std::vector<double> dx;
  std::vector<double> dy;

  VectorField() = default;
  explicit VectorField(const CartesianGrid& g) : grid(g), dx(g.size(), 0.0), dy(g.size(), 0.0) {}
};

// A field of inclusion indicators in [0,1]; ground truth is exactly {0,1}.
struct IndexField {
  CartesianGrid grid;
  std::vector<double> values;

  IndexField() = default;
  explicit IndexField(const CartesianGrid& g, double fill = 0.0) : grid(g), values(g.size(), fill) {}
};

inline IndexField ground_truth_index(const ConductivitySample& sample, const CartesianGrid& grid) {
  IndexField f(grid);
  if (sample.shapes.empty()) return f;
  for (std::size_t k = 0; k < grid.size(); ++k)
    f.values[k] = union_level_set(sample, grid.node(k)) < 0.0 ? 1.0 : 0.0;
  return f;
}

// Node values of sigma. The solver harmonically averages these onto faces.
inline ScalarField conductivity_on_grid(const ConductivitySample& sample, const CartesianGrid& grid) {
  sample.validate();
  ScalarField s(grid, sample.sigma_background);
  if (sample.shapes.empty()) return s;
  for (std::size_t k = 0; k < grid.size(); ++k)
    if (union_level_set(sample, grid.node(k)) < 0.0) s.values[k] = sample.sigma_inclusion;
  return s;
}

}  // namespace ddsm
