#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ddsm/domain.hpp"
#include "ddsm/error.hpp"
#include "ddsm/grid.hpp"
#include "ddsm/spectral.hpp"

namespace ddsm {

struct SolverConfig {
  double tolerance = 1e-10;       // relative residual
  std::size_t max_iterations = 0;  // 0 means 10 * n1 * n2

  void validate() const {
    if (!(tolerance > 0.0 && tolerance < 1.0)) throw ConfigError("solver tolerance must lie in (0,1)");
  }
  std::size_t budget(const CartesianGrid& g) const { return max_iterations ? max_iterations : 10 * g.size(); }
};

struct SolveStats {
  std::size_t iterations = 0;
  double residual = 0.0;
};

// Finite-volume form of -div(sigma grad u) on the dual cells of a Domain:
//   (A u)_k = sum over faces f of k  c_f (u_k - u_nb),  c_f = aperture_f / h_f * sigma_f
// with sigma_f the harmonic mean of the two node values. Neumann data enters
// the right-hand side as the boundary flux through the cell, w_m g_m.
class DiffusionOperator {
 public:
  DiffusionOperator(std::shared_ptr<const Domain> domain, const ScalarField& sigma) : domain_(std::move(domain)) {
    const auto& g = domain_->grid();
    if (!(sigma.grid == g)) throw ConfigError("conductivity grid does not match the domain grid");
    for (double s : sigma.values)
      if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("conductivity must be strictly positive");
    const std::size_t n1 = g.n1, n2 = g.n2;
    cx_.assign((n1 - 1) * n2, 0.0);
    cy_.assign(n1 * (n2 - 1), 0.0);
    diag_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.size()));
    auto harmonic = [](double a, double b) { return 2.0 * a * b / (a + b); };
    for (std::size_t j = 0; j < n2; ++j)
      for (std::size_t i = 0; i + 1 < n1; ++i) {
        const std::size_t k = g.index(i, j), nb = g.index(i + 1, j);
        if (!domain_->active(k) || !domain_->active(nb)) continue;
        const double c = domain_->aperture_x(i, j) / g.h1() * harmonic(sigma.values[k], sigma.values[nb]);
        cx_[j * (n1 - 1) + i] = c;
        diag_[static_cast<Eigen::Index>(k)] += c;
        diag_[static_cast<Eigen::Index>(nb)] += c;
      }
    for (std::size_t j = 0; j + 1 < n2; ++j)
      for (std::size_t i = 0; i < n1; ++i) {
        const std::size_t k = g.index(i, j), nb = g.index(i, j + 1);
        if (!domain_->active(k) || !domain_->active(nb)) continue;
        const double c = domain_->aperture_y(i, j) / g.h2() * harmonic(sigma.values[k], sigma.values[nb]);
        cy_[j * n1 + i] = c;
        diag_[static_cast<Eigen::Index>(k)] += c;
        diag_[static_cast<Eigen::Index>(nb)] += c;
      }
  }

  static DiffusionOperator laplacian(std::shared_ptr<const Domain> domain) {
    ScalarField one(domain->grid(), 1.0);
    return DiffusionOperator(std::move(domain), one);
  }

  const std::shared_ptr<const Domain>& domain() const { return domain_; }
  const CartesianGrid& grid() const { return domain_->grid(); }
  const Eigen::VectorXd& diagonal() const { return diag_; }

  void apply(const Eigen::VectorXd& u, Eigen::VectorXd& out) const {
    const auto& g = grid();
    const std::size_t n1 = g.n1, n2 = g.n2;
    out.noalias() = diag_.cwiseProduct(u);
    const double* pu = u.data();
    double* po = out.data();
    for (std::size_t j = 0; j < n2; ++j) {
      const double* c = cx_.data() + j * (n1 - 1);
      const std::size_t row = j * n1;
      for (std::size_t i = 0; i + 1 < n1; ++i) {
        po[row + i] -= c[i] * pu[row + i + 1];
        po[row + i + 1] -= c[i] * pu[row + i];
      }
    }
    for (std::size_t j = 0; j + 1 < n2; ++j) {
      const double* c = cy_.data() + j * n1;
      const std::size_t row = j * n1;
      for (std::size_t i = 0; i < n1; ++i) {
        po[row + i] -= c[i] * pu[row + n1 + i];
        po[row + n1 + i] -= c[i] * pu[row + i];
      }
    }
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& u) const {
    Eigen::VectorXd out(u.size());
    apply(u, out);
    return out;
  }

  // Flux load of Neumann data on the domain's boundary loop.
  Eigen::VectorXd neumann_load(const BoundaryTrace& g) const {
    const auto& loop = domain_->loop();
    if (g.size() != loop->size()) throw ConfigError("Neumann data does not live on the domain boundary");
    const double integral = boundary_integral(g);
    const double scale = boundary_norm(g);
    if (std::abs(integral) > 1e-8 * std::max(scale, 1e-300) && scale > 0.0)
      throw NumericalError("incompatible Neumann data: boundary integral " + std::to_string(integral));
    Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid().size()));
    for (std::size_t m = 0; m < loop->size(); ++m)
      b[static_cast<Eigen::Index>(loop->nodes[m])] += loop->weights[m] * g.values[m];
    return b;
  }

  // Remove the component along the null space (constants on active nodes).
  void project(Eigen::VectorXd& b) const {
    double s = 0.0;
    for (Eigen::Index k = 0; k < b.size(); ++k)
      if (domain_->active(static_cast<std::size_t>(k))) s += b[k];
    const double mean = s / static_cast<double>(domain_->active_count());
    for (Eigen::Index k = 0; k < b.size(); ++k) b[k] = domain_->active(static_cast<std::size_t>(k)) ? b[k] - mean : 0.0;
  }

  void recenter(Eigen::VectorXd& u) const { project(u); }

 private:
  std::shared_ptr<const Domain> domain_;
  std::vector<double> cx_, cy_;
  Eigen::VectorXd diag_;
};

// Jacobi-preconditioned conjugate gradients for A u = b on the complement of
// the constants. The load is projected first; the result has zero mean over
// the active nodes. b == 0 returns the zero field.
inline ScalarField solve_load(const DiffusionOperator& op, Eigen::VectorXd b, const SolverConfig& cfg,
                              SolveStats* stats = nullptr) {
  cfg.validate();
  const auto& grid = op.grid();
  const auto& domain = *op.domain();
  op.project(b);
  const Eigen::Index n = b.size();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
  const double bnorm = b.norm();
  ScalarField out(grid);
  if (bnorm == 0.0) {
    if (stats) *stats = {};
    return out;
  }
  Eigen::VectorXd inv_diag(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double d = op.diagonal()[k];
    inv_diag[k] = (domain.active(static_cast<std::size_t>(k)) && d > 0.0) ? 1.0 / d : 0.0;
  }
  Eigen::VectorXd r = b, z = inv_diag.cwiseProduct(r), p = z, q(n);
  double rz = r.dot(z);
  const std::size_t budget = cfg.budget(grid);
  double rel = 1.0;
  std::size_t it = 0;
  for (; it < budget; ++it) {
    op.apply(p, q);
    const double pq = p.dot(q);
    if (!(pq > 0.0)) break;
    const double alpha = rz / pq;
    u += alpha * p;
    r -= alpha * q;
    rel = r.norm() / bnorm;
    if (rel <= cfg.tolerance) {
      ++it;
      break;
    }
    z = inv_diag.cwiseProduct(r);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  if (!(rel <= cfg.tolerance))
    throw NumericalError("conjugate gradients did not converge: relative residual " + std::to_string(rel) + " after " +
                         std::to_string(it) + " iterations");
  op.recenter(u);
  if (stats) *stats = {it, rel};
  out.values.assign(u.data(), u.data() + n);
  return out;
}

inline ScalarField solve_neumann(const DiffusionOperator& op, const BoundaryTrace& g, const SolverConfig& cfg,
                                 SolveStats* stats = nullptr) {
  return solve_load(op, op.neumann_load(g), cfg, stats);
}

// Boundary values of a field on the domain loop, shifted to zero boundary mean.
inline BoundaryTrace boundary_trace(const ScalarField& u, const Domain& domain) {
  return centered(sample_boundary(u.values, domain));
}

inline BoundaryTrace ntd_apply(const DiffusionOperator& op, const BoundaryTrace& g, const SolverConfig& cfg) {
  return boundary_trace(solve_neumann(op, g, cfg), *op.domain());
}

// Central differences inside, one-sided second-order stencils on the outer
// grid rows and columns.
inline VectorField gradient_field(const ScalarField& phi) {
  const auto& g = phi.grid;
  VectorField out(g);
  const double h1 = g.h1(), h2 = g.h2();
  for (std::size_t j = 0; j < g.n2; ++j)
    for (std::size_t i = 0; i < g.n1; ++i) {
      const std::size_t k = g.index(i, j);
      if (i == 0)
        out.dx[k] = (-3.0 * phi(0, j) + 4.0 * phi(1, j) - phi(2, j)) / (2.0 * h1);
      else if (i + 1 == g.n1)
        out.dx[k] = (3.0 * phi(i, j) - 4.0 * phi(i - 1, j) + phi(i - 2, j)) / (2.0 * h1);
      else
        out.dx[k] = (phi(i + 1, j) - phi(i - 1, j)) / (2.0 * h1);
      if (j == 0)
        out.dy[k] = (-3.0 * phi(i, 0) + 4.0 * phi(i, 1) - phi(i, 2)) / (2.0 * h2);
      else if (j + 1 == g.n2)
        out.dy[k] = (3.0 * phi(i, j) - 4.0 * phi(i, j - 1) + phi(i, j - 2)) / (2.0 * h2);
      else
        out.dy[k] = (phi(i, j + 1) - phi(i, j - 1)) / (2.0 * h2);
    }
  return out;
}

// Adds `charge` at an arbitrary point, split bilinearly over the four
// surrounding nodes.
inline void splat(Eigen::VectorXd& b, const CartesianGrid& g, Point p, double charge) {
  const double s = (p.x1 - g.lo1) / g.h1(), t = (p.x2 - g.lo2) / g.h2();
  const double fi = std::floor(s), fj = std::floor(t);
  std::size_t i = static_cast<std::size_t>(std::clamp(fi, 0.0, static_cast<double>(g.n1 - 2)));
  std::size_t j = static_cast<std::size_t>(std::clamp(fj, 0.0, static_cast<double>(g.n2 - 2)));
  const double a = s - static_cast<double>(i), c = t - static_cast<double>(j);
  b[static_cast<Eigen::Index>(g.index(i, j))] += charge * (1 - a) * (1 - c);
  b[static_cast<Eigen::Index>(g.index(i + 1, j))] += charge * a * (1 - c);
  b[static_cast<Eigen::Index>(g.index(i, j + 1))] += charge * (1 - a) * c;
  b[static_cast<Eigen::Index>(g.index(i + 1, j + 1))] += charge * a * c;
}

// Discrete -d . grad(delta_x): along each axis a pair of charges +-1/(2h)
// one grid step either side of x, weighted by the component of d.
inline Eigen::VectorXd dipole_load(const CartesianGrid& g, Point x, Point d) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.size()));
  const double h1 = g.h1(), h2 = g.h2();
  if (d.x1 != 0.0) {
    splat(b, g, {x.x1 + h1, x.x2}, d.x1 / (2 * h1));
    splat(b, g, {x.x1 - h1, x.x2}, -d.x1 / (2 * h1));
  }
  if (d.x2 != 0.0) {
    splat(b, g, {x.x1, x.x2 + h2}, d.x2 / (2 * h2));
    splat(b, g, {x.x1, x.x2 - h2}, -d.x2 / (2 * h2));
  }
  return b;
}

inline void require_unit(Point d) {
  if (std::abs(norm(d) - 1.0) > 1e-9) throw ConfigError("direction must be a unit vector");
}

// Solves for the background (sigma == 1) problem on a fixed domain: Cauchy
// difference potentials, background voltages and dipole probing traces.
class BackgroundModel {
 public:
  explicit BackgroundModel(std::shared_ptr<const Domain> domain, SolverConfig cfg = {})
      : op_(DiffusionOperator::laplacian(std::move(domain))), cfg_(cfg) {
    cfg_.validate();
  }

  const DiffusionOperator& op() const { return op_; }
  const Domain& domain() const { return *op_.domain(); }
  const SolverConfig& config() const { return cfg_; }

  BoundaryTrace ntd(const BoundaryTrace& g) const { return ntd_apply(op_, g, cfg_); }

  // Harmonic potential with Neumann data (-Delta_boundary)^gamma applied to
  // `data`, after removing the mean of the data.
  ScalarField solve_phi(const BoundaryTrace& data, double gamma = 0.0) const {
    BoundaryTrace flux = centered(frac_laplacian(data, gamma));
    return solve_neumann(op_, flux, cfg_);
  }

  ScalarField solve(Eigen::VectorXd load) const { return solve_load(op_, std::move(load), cfg_); }

  BoundaryTrace solve_dipole(Point x, Point d) const {
    require_unit(d);
    const double margin = 2.0 * std::max(domain().grid().h1(), domain().grid().h2());
    if (domain().distance_to_boundary(x) < margin - 1e-12)
      throw ConfigError("dipole source too close to the boundary");
    return boundary_trace(solve(dipole_load(domain().grid(), x, d)), domain());
  }

 private:
  DiffusionOperator op_;
  SolverConfig cfg_;
};

}  // namespace ddsm
