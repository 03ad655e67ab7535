#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "ddsm/error.hpp"
#include "ddsm/grid.hpp"

namespace ddsm {

// An ordered closed curve sampled at a finite set of points. Traces on the
// curve are integrated with `weights`; `positions` are arc-length coordinates
// in [0, length), strictly increasing along the loop.
struct BoundaryLoop {
  std::vector<std::size_t> nodes;  // grid node carrying each sample (empty for synthetic loops)
  std::vector<Point> points;       // location on the curve
  std::vector<double> positions;
  std::vector<double> weights;
  std::vector<double> angles;  // polar angle of `points`, in [0, 2pi)
  double length = 0.0;
  bool uniform = false;  // positions[m] == m * length / size()

  std::size_t size() const { return points.size(); }

  // M equispaced samples of the circle of the given radius, starting at angle 0.
  static std::shared_ptr<const BoundaryLoop> circle(std::size_t m, double radius = 1.0) {
    auto loop = std::make_shared<BoundaryLoop>();
    loop->length = 2.0 * std::numbers::pi * radius;
    loop->uniform = true;
    for (std::size_t k = 0; k < m; ++k) {
      const double t = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(m);
      loop->points.push_back({radius * std::cos(t), radius * std::sin(t)});
      loop->positions.push_back(radius * t);
      loop->weights.push_back(loop->length / static_cast<double>(m));
      loop->angles.push_back(t);
    }
    return loop;
  }
};

inline double polar_angle(Point p) {
  double t = std::atan2(p.x2, p.x1);
  if (t < 0.0) t += 2.0 * std::numbers::pi;
  return t;
}

enum class DomainKind { square, disk };

// Node-centered finite-volume geometry of a domain embedded in a Cartesian
// grid. Each node owns the dual cell [x - h/2, x + h/2] clipped to the domain.
// Face apertures are the lengths of the dual-cell faces inside the domain;
// the boundary loop collects nodes whose dual cell meets the domain boundary.
class Domain {
 public:
  static std::shared_ptr<const Domain> square(const CartesianGrid& grid) {
    grid.validate();
    auto d = std::shared_ptr<Domain>(new Domain(grid, DomainKind::square, 0.0));
    d->build();
    return d;
  }

  // Disk centered at the origin, clipped to the grid rectangle.
  static std::shared_ptr<const Domain> disk(const CartesianGrid& grid, double radius = 1.0) {
    grid.validate();
    if (!(radius > 0.0)) throw ConfigError("disk radius must be positive");
    auto d = std::shared_ptr<Domain>(new Domain(grid, DomainKind::disk, radius));
    d->build();
    return d;
  }

  const CartesianGrid& grid() const { return grid_; }
  DomainKind kind() const { return kind_; }
  double radius() const { return radius_; }

  // Aperture of the face between (i,j) and (i+1,j).
  double aperture_x(std::size_t i, std::size_t j) const { return ax_[j * (grid_.n1 - 1) + i]; }
  // Aperture of the face between (i,j) and (i,j+1).
  double aperture_y(std::size_t i, std::size_t j) const { return ay_[j * grid_.n1 + i]; }
  double volume(std::size_t k) const { return volume_[k]; }
  bool active(std::size_t k) const { return active_[k] != 0; }
  std::size_t active_count() const { return active_count_; }
  const std::shared_ptr<const BoundaryLoop>& loop() const { return loop_; }

  // Weights that evaluate a node field at loop point m.
  const std::vector<std::pair<std::size_t, double>>& boundary_stencil(std::size_t m) const { return stencils_[m]; }

  bool contains(Point x) const {
    const bool in_box = x.x1 >= grid_.lo1 && x.x1 <= grid_.hi1 && x.x2 >= grid_.lo2 && x.x2 <= grid_.hi2;
    if (kind_ == DomainKind::square) return in_box;
    return in_box && norm(x) <= radius_;
  }

  double distance_to_boundary(Point x) const {
    const double box = std::min({x.x1 - grid_.lo1, grid_.hi1 - x.x1, x.x2 - grid_.lo2, grid_.hi2 - x.x2});
    if (kind_ == DomainKind::square) return box;
    return std::min(box, radius_ - norm(x));
  }

 private:
  Domain(const CartesianGrid& g, DomainKind k, double r) : grid_(g), kind_(k), radius_(r) {}

  static double overlap(double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  }

  // Length of the vertical segment {x} x [y0,y1] inside the domain.
  double vertical_inside(double x, double y0, double y1) const {
    double len = overlap(y0, y1, grid_.lo2, grid_.hi2);
    if (kind_ == DomainKind::disk) {
      if (std::abs(x) >= radius_) return 0.0;
      const double c = std::sqrt(radius_ * radius_ - x * x);
      len = overlap(std::max(y0, grid_.lo2), std::min(y1, grid_.hi2), -c, c);
    }
    return len;
  }

  double horizontal_inside(double y, double x0, double x1) const {
    double len = overlap(x0, x1, grid_.lo1, grid_.hi1);
    if (kind_ == DomainKind::disk) {
      if (std::abs(y) >= radius_) return 0.0;
      const double c = std::sqrt(radius_ * radius_ - y * y);
      len = overlap(std::max(x0, grid_.lo1), std::min(x1, grid_.hi1), -c, c);
    }
    return len;
  }

  double cell_volume(Point c) const {
    const double h1 = grid_.h1(), h2 = grid_.h2();
    if (kind_ == DomainKind::square)
      return overlap(c.x1 - h1 / 2, c.x1 + h1 / 2, grid_.lo1, grid_.hi1) *
             overlap(c.x2 - h2 / 2, c.x2 + h2 / 2, grid_.lo2, grid_.hi2);
    constexpr int sub = 16;
    double v = 0.0;
    for (int a = 0; a < sub; ++a)
      for (int b = 0; b < sub; ++b) {
        const Point p{c.x1 - h1 / 2 + (a + 0.5) * h1 / sub, c.x2 - h2 / 2 + (b + 0.5) * h2 / sub};
        if (contains(p)) v += h1 * h2 / (sub * sub);
      }
    return v;
  }

  void build() {
    const std::size_t n1 = grid_.n1, n2 = grid_.n2;
    const double h1 = grid_.h1(), h2 = grid_.h2();
    ax_.assign((n1 - 1) * n2, 0.0);
    ay_.assign(n1 * (n2 - 1), 0.0);
    for (std::size_t j = 0; j < n2; ++j)
      for (std::size_t i = 0; i + 1 < n1; ++i) {
        const Point p = grid_.node(i, j);
        ax_[j * (n1 - 1) + i] = vertical_inside(p.x1 + h1 / 2, p.x2 - h2 / 2, p.x2 + h2 / 2);
      }
    for (std::size_t j = 0; j + 1 < n2; ++j)
      for (std::size_t i = 0; i < n1; ++i) {
        const Point p = grid_.node(i, j);
        ay_[j * n1 + i] = horizontal_inside(p.x2 + h2 / 2, p.x1 - h1 / 2, p.x1 + h1 / 2);
      }

    volume_.assign(grid_.size(), 0.0);
    active_.assign(grid_.size(), 0);
    const double tiny = 1e-12 * std::min(h1, h2);
    for (std::size_t j = 0; j < n2; ++j)
      for (std::size_t i = 0; i < n1; ++i) {
        const std::size_t k = grid_.index(i, j);
        volume_[k] = cell_volume(grid_.node(i, j));
        double open = 0.0;
        if (i > 0) open = std::max(open, aperture_x(i - 1, j));
        if (i + 1 < n1) open = std::max(open, aperture_x(i, j));
        if (j > 0) open = std::max(open, aperture_y(i, j - 1));
        if (j + 1 < n2) open = std::max(open, aperture_y(i, j));
        active_[k] = open > tiny ? 1 : 0;
      }
    active_count_ = static_cast<std::size_t>(std::count(active_.begin(), active_.end(), 1));

    loop_ = kind_ == DomainKind::square ? square_loop() : disk_loop();
    build_stencils();
  }

  // Square loop points are nodes. Disk loop points sit up to h off their node,
  // so values there come from a linear least-squares fit over the active
  // nodes of the surrounding 3x3 patch; plain node values would put an O(h)
  // staircase jitter into every trace.
  void build_stencils() {
    stencils_.assign(loop_->size(), {});
    for (std::size_t m = 0; m < loop_->size(); ++m) {
      const std::size_t c = loop_->nodes[m];
      if (kind_ == DomainKind::square) {
        stencils_[m] = {{c, 1.0}};
        continue;
      }
      const Point pc = grid_.node(c);
      const std::size_t ic = c % grid_.n1, jc = c / grid_.n1;
      std::vector<std::size_t> patch;
      for (std::size_t j = jc == 0 ? 0 : jc - 1; j <= std::min(jc + 1, grid_.n2 - 1); ++j)
        for (std::size_t i = ic == 0 ? 0 : ic - 1; i <= std::min(ic + 1, grid_.n1 - 1); ++i)
          if (active_[grid_.index(i, j)]) patch.push_back(grid_.index(i, j));
      const double sx = grid_.h1(), sy = grid_.h2();
      double nm[3][3] = {};
      for (std::size_t k : patch) {
        const Point q = grid_.node(k) - pc;
        const double r[3] = {1.0, q.x1 / sx, q.x2 / sy};
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) nm[a][b] += r[a] * r[b];
      }
      const double det = nm[0][0] * (nm[1][1] * nm[2][2] - nm[1][2] * nm[2][1]) -
                         nm[0][1] * (nm[1][0] * nm[2][2] - nm[1][2] * nm[2][0]) +
                         nm[0][2] * (nm[1][0] * nm[2][1] - nm[1][1] * nm[2][0]);
      if (patch.size() < 3 || std::abs(det) < 1e-10) {
        stencils_[m] = {{c, 1.0}};
        continue;
      }
      double inv[3][3];
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
          const int a1 = (b + 1) % 3, a2 = (b + 2) % 3, b1 = (a + 1) % 3, b2 = (a + 2) % 3;
          inv[a][b] = (nm[a1][b1] * nm[a2][b2] - nm[a1][b2] * nm[a2][b1]) / det;
        }
      const Point e = loop_->points[m] - pc;
      const double t[3] = {1.0, e.x1 / sx, e.x2 / sy};
      double w[3] = {};
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) w[b] += t[a] * inv[a][b];
      for (std::size_t k : patch) {
        const Point q = grid_.node(k) - pc;
        stencils_[m].push_back({k, w[0] + w[1] * q.x1 / sx + w[2] * q.x2 / sy});
      }
    }
  }

  // Counter-clockwise traversal starting at the corner (lo1, lo2).
  std::shared_ptr<const BoundaryLoop> square_loop() const {
    const std::size_t n1 = grid_.n1, n2 = grid_.n2;
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n1; ++i) order.push_back(grid_.index(i, 0));
    for (std::size_t j = 1; j < n2; ++j) order.push_back(grid_.index(n1 - 1, j));
    for (std::size_t i = n1 - 1; i-- > 0;) order.push_back(grid_.index(i, n2 - 1));
    for (std::size_t j = n2 - 1; j-- > 1;) order.push_back(grid_.index(0, j));

    auto loop = std::make_shared<BoundaryLoop>();
    const std::size_t m = order.size();
    double s = 0.0;
    for (std::size_t q = 0; q < m; ++q) {
      const Point p = grid_.node(order[q]);
      loop->nodes.push_back(order[q]);
      loop->points.push_back(p);
      loop->positions.push_back(s);
      loop->angles.push_back(polar_angle(p));
      s += norm(grid_.node(order[(q + 1) % m]) - p);
    }
    loop->length = s;
    for (std::size_t q = 0; q < m; ++q) {
      const double prev = norm(loop->points[q] - loop->points[(q + m - 1) % m]);
      const double next = norm(loop->points[(q + 1) % m] - loop->points[q]);
      loop->weights.push_back(0.5 * (prev + next));
    }
    loop->uniform = std::abs(grid_.h1() - grid_.h2()) <= 1e-14 * grid_.h1();
    return loop;
  }

  // Arc of the circle inside the (clipped) dual cell of node p: returns the
  // arc length and the angle of the arc's midpoint direction.
  std::pair<double, double> cell_arc(Point p) const {
    const double h1 = grid_.h1(), h2 = grid_.h2();
    const double x0 = std::max(p.x1 - h1 / 2, grid_.lo1), x1 = std::min(p.x1 + h1 / 2, grid_.hi1);
    const double y0 = std::max(p.x2 - h2 / 2, grid_.lo2), y1 = std::min(p.x2 + h2 / 2, grid_.hi2);
    const double r = radius_;
    const double two_pi = 2.0 * std::numbers::pi;
    std::vector<double> cuts{0.0, two_pi};
    auto add = [&](double t) {
      t = std::fmod(t + two_pi, two_pi);
      cuts.push_back(t);
    };
    for (double x : {x0, x1})
      if (std::abs(x) <= r) {
        const double a = std::acos(x / r);
        add(a);
        add(-a);
      }
    for (double y : {y0, y1})
      if (std::abs(y) <= r) {
        const double a = std::asin(y / r);
        add(a);
        add(std::numbers::pi - a);
      }
    std::sort(cuts.begin(), cuts.end());
    double len = 0.0, cx = 0.0, cy = 0.0;
    for (std::size_t q = 0; q + 1 < cuts.size(); ++q) {
      const double dt = cuts[q + 1] - cuts[q];
      if (dt <= 0.0) continue;
      const double tm = 0.5 * (cuts[q] + cuts[q + 1]);
      const double xm = r * std::cos(tm), ym = r * std::sin(tm);
      if (xm >= x0 && xm <= x1 && ym >= y0 && ym <= y1) {
        len += r * dt;
        cx += dt * std::cos(tm);
        cy += dt * std::sin(tm);
      }
    }
    return {len, len > 0.0 ? polar_angle({cx, cy}) : 0.0};
  }

  std::shared_ptr<const BoundaryLoop> disk_loop() const {
    struct Entry {
      double angle, len;
      std::size_t node;
    };
    std::vector<Entry> entries;
    const double tiny = 1e-12 * std::min(grid_.h1(), grid_.h2());
    for (std::size_t k = 0; k < grid_.size(); ++k) {
      if (!active_[k]) continue;
      const auto [len, angle] = cell_arc(grid_.node(k));
      if (len > tiny) entries.push_back({angle, len, k});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.angle < b.angle; });
    auto loop = std::make_shared<BoundaryLoop>();
    for (const auto& e : entries) {
      loop->nodes.push_back(e.node);
      loop->points.push_back({radius_ * std::cos(e.angle), radius_ * std::sin(e.angle)});
      loop->positions.push_back(radius_ * e.angle);
      loop->angles.push_back(e.angle);
      loop->weights.push_back(e.len);
    }
    loop->length = 2.0 * std::numbers::pi * radius_;
    loop->uniform = false;
    return loop;
  }

  CartesianGrid grid_;
  DomainKind kind_;
  double radius_;
  std::vector<double> ax_, ay_, volume_;
  std::vector<char> active_;
  std::size_t active_count_ = 0;
  std::shared_ptr<const BoundaryLoop> loop_;
  std::vector<std::vector<std::pair<std::size_t, double>>> stencils_;
};

// A real function sampled on a boundary loop: currents, voltages, probing
// functions, Cauchy differences.
struct BoundaryTrace {
  std::shared_ptr<const BoundaryLoop> loop;
  std::vector<double> values;

  BoundaryTrace() = default;
  explicit BoundaryTrace(std::shared_ptr<const BoundaryLoop> l, double fill = 0.0)
      : loop(std::move(l)), values(loop->size(), fill) {}
  BoundaryTrace(std::shared_ptr<const BoundaryLoop> l, std::vector<double> v) : loop(std::move(l)), values(std::move(v)) {
    if (values.size() != loop->size()) throw ConfigError("trace length does not match its boundary loop");
  }

  std::size_t size() const { return values.size(); }
};

inline void require_same_loop(const BoundaryTrace& a, const BoundaryTrace& b) {
  if (a.size() != b.size() || a.loop->size() != b.loop->size())
    throw ConfigError("boundary traces live on different loops");
}

// Quadrature of a trace over its loop.
inline double boundary_integral(const BoundaryTrace& t) {
  double s = 0.0;
  for (std::size_t m = 0; m < t.size(); ++m) s += t.loop->weights[m] * t.values[m];
  return s;
}

inline double boundary_inner(const BoundaryTrace& a, const BoundaryTrace& b) {
  require_same_loop(a, b);
  double s = 0.0;
  for (std::size_t m = 0; m < a.size(); ++m) s += a.loop->weights[m] * a.values[m] * b.values[m];
  return s;
}

inline double boundary_norm(const BoundaryTrace& t) { return std::sqrt(boundary_inner(t, t)); }

// Subtract the quadrature mean so that the boundary integral vanishes.
inline BoundaryTrace centered(BoundaryTrace t) {
  const double mean = boundary_integral(t) / t.loop->length;
  for (auto& v : t.values) v -= mean;
  return t;
}

inline BoundaryTrace operator-(const BoundaryTrace& a, const BoundaryTrace& b) {
  require_same_loop(a, b);
  BoundaryTrace r = a;
  for (std::size_t m = 0; m < r.size(); ++m) r.values[m] -= b.values[m];
  return r;
}

inline BoundaryTrace operator*(double s, BoundaryTrace t) {
  for (auto& v : t.values) v *= s;
  return t;
}

// Restriction of a node field to the nodes of a grid-attached loop.
inline BoundaryTrace restrict_to_loop(std::span<const double> field, const std::shared_ptr<const BoundaryLoop>& loop) {
  if (loop->nodes.size() != loop->size()) throw ConfigError("loop is not attached to grid nodes");
  BoundaryTrace t(loop);
  for (std::size_t m = 0; m < loop->size(); ++m) t.values[m] = field[loop->nodes[m]];
  return t;
}

// Values of a node field at the loop points of a domain.
inline BoundaryTrace sample_boundary(std::span<const double> field, const Domain& domain) {
  BoundaryTrace t(domain.loop());
  for (std::size_t m = 0; m < t.size(); ++m) {
    double v = 0.0;
    for (const auto& [k, w] : domain.boundary_stencil(m)) v += w * field[k];
    t.values[m] = v;
  }
  return t;
}

// Periodic linear interpolation of a trace at an arc position measured as a
// fraction of the loop length.
inline double interpolate_fraction(const BoundaryTrace& t, double fraction) {
  const auto& pos = t.loop->positions;
  const double len = t.loop->length;
  const std::size_t m = t.size();
  double s = std::fmod(fraction, 1.0);
  if (s < 0.0) s += 1.0;
  s *= len;
  auto it = std::upper_bound(pos.begin(), pos.end(), s);
  const std::size_t hi = static_cast<std::size_t>(it - pos.begin()) % m;
  const std::size_t lo = (hi + m - 1) % m;
  double s_lo = pos[lo], s_hi = pos[hi];
  if (s_hi <= s_lo) s_hi += len;
  double ss = s;
  if (ss < s_lo) ss += len;
  const double w = (s_hi > s_lo) ? (ss - s_lo) / (s_hi - s_lo) : 0.0;
  return (1.0 - w) * t.values[lo] + w * t.values[hi];
}

// Transfer a trace onto another loop by linear interpolation in normalized
// arc length. Both loops must share the same starting point and orientation.
inline BoundaryTrace resample_trace(const BoundaryTrace& t, const std::shared_ptr<const BoundaryLoop>& target) {
  BoundaryTrace r(target);
  for (std::size_t m = 0; m < target->size(); ++m)
    r.values[m] = interpolate_fraction(t, target->positions[m] / target->length);
  return r;
}

}  // namespace ddsm
