#pragma once

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include <Eigen/Core>

#include "ddsm/domain.hpp"
#include "ddsm/error.hpp"
#include "ddsm/forward.hpp"
#include "ddsm/spectral.hpp"

namespace ddsm {

// Boundary trace of the Neumann dipole potential on a disk of radius R
// centered at the origin: eta(xi) = (1/pi) ((xi - x) . d) / |x - xi|^2.
inline BoundaryTrace probing_trace_disk(Point x, Point d, const std::shared_ptr<const BoundaryLoop>& loop,
                                        double margin = 0.0) {
  require_unit(d);
  if (loop->size() == 0) throw ConfigError("empty boundary loop");
  const double radius = norm(loop->points.front());
  if (!(norm(x) < radius - margin)) throw ConfigError("sampling point outside the disk or too close to its boundary");
  BoundaryTrace t(loop);
  for (std::size_t m = 0; m < loop->size(); ++m) {
    const Point r = loop->points[m] - x;
    t.values[m] = dot(r, d) / (std::numbers::pi * dot(r, r));
  }
  return t;
}

// Source of probing traces eta_{x,d}. The explicit variant evaluates the disk
// formula. The numeric variant solves the background dipole problem; instead
// of one solve per (x,d) it tabulates, once, the discrete Green's function
// G_m = A^+ s_m for every boundary point m, s_m being the point's sampling
// stencil. By symmetry of A,
//   w_{x,d}(xi_m) = <s_m, A^+ b_{x,d}> = <G_m, b_{x,d}>,
// which equals the direct dipole solve for any x and d, not only grid-aligned ones.
class ProbingSource {
 public:
  enum class Kind { explicit_disk, numeric_dipole };

  static ProbingSource explicit_disk(std::shared_ptr<const BoundaryLoop> loop, double margin = 0.0) {
    ProbingSource s;
    s.kind_ = Kind::explicit_disk;
    s.loop_ = std::move(loop);
    s.margin_ = margin;
    return s;
  }

  static ProbingSource numeric_dipole(std::shared_ptr<const BackgroundModel> model) {
    ProbingSource s;
    s.kind_ = Kind::numeric_dipole;
    s.loop_ = model->domain().loop();
    s.model_ = std::move(model);
    s.table_ = std::make_shared<Table>();
    const auto& g = s.model_->domain().grid();
    s.margin_ = 2.0 * std::max(g.h1(), g.h2());
    return s;
  }

  Kind kind() const { return kind_; }
  const std::shared_ptr<const BoundaryLoop>& loop() const { return loop_; }

  BoundaryTrace trace(Point x, Point d) const {
    if (kind_ == Kind::explicit_disk) return probing_trace_disk(x, d, loop_, margin_);
    require_unit(d);
    const auto& dom = model_->domain();
    if (dom.distance_to_boundary(x) < margin_ - 1e-12) throw ConfigError("dipole source too close to the boundary");
    const auto& t = table();
    const Eigen::VectorXd load = dipole_load(dom.grid(), x, d);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(t.cols());
    for (Eigen::Index k = 0; k < load.size(); ++k)
      if (load[k] != 0.0) acc.noalias() += load[k] * t.row(k).transpose();
    return centered(BoundaryTrace(loop_, std::vector<double>(acc.data(), acc.data() + acc.size())));
  }

  // Forces the Green's function table to be built now.
  void prepare() const {
    if (kind_ == Kind::numeric_dipole) table();
  }

 private:
  struct Table {
    std::once_flag once;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> g;
  };

  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& table() const {
    std::call_once(table_->once, [this] {
      const auto& dom = model_->domain();
      const std::size_t k = dom.grid().size(), m = loop_->size();
      table_->g.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
      for (std::size_t q = 0; q < m; ++q) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
        for (const auto& [node, w] : dom.boundary_stencil(q)) e[static_cast<Eigen::Index>(node)] += w;
        const ScalarField gm = model_->solve(e);
        for (std::size_t n = 0; n < k; ++n) table_->g(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(q)) = gm.values[n];
      }
    });
    return table_->g;
  }

  Kind kind_ = Kind::explicit_disk;
  std::shared_ptr<const BoundaryLoop> loop_;
  std::shared_ptr<const BackgroundModel> model_;
  std::shared_ptr<Table> table_;
  double margin_ = 0.0;
};

struct ClassicIndex {
  IndexField field;
  std::vector<double> raw;  // before max-normalization
  bool zero_contrast = false;
};

// Single-pair direct sampling index with the optimal direction d_x = grad phi / |grad phi|:
//   I(x) = |grad phi(x)| / (||f - Lambda_0 g||_{L2} |eta_{x,d_x}|_{H^{3/2}}),
// where phi is the background potential with Neumann data (-Delta)^gamma (f - Lambda_0 g).
// Evaluated at nodes at least 2h inside the domain, then divided by its maximum.
inline ClassicIndex index_field_classic(const BoundaryTrace& f, const BoundaryTrace& g, const BackgroundModel& model,
                                        double gamma, const ProbingSource& source) {
  const auto& dom = model.domain();
  const auto& grid = dom.grid();
  ClassicIndex out{IndexField(grid), std::vector<double>(grid.size(), 0.0), false};
  const BoundaryTrace diff = centered(f - model.ntd(g));
  const double contrast = boundary_norm(diff);
  if (contrast < 1e-12) {
    out.zero_contrast = true;
    return out;
  }
  const ScalarField phi = model.solve_phi(diff, gamma);
  const VectorField grad = gradient_field(phi);
  const double margin = 2.0 * std::max(grid.h1(), grid.h2());
  const bool explicit_loop = source.kind() == ProbingSource::Kind::explicit_disk;
  double peak = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const Point x = grid.node(k);
    if (!dom.active(k) || dom.distance_to_boundary(x) < margin - 1e-12) continue;
    if (explicit_loop && !(norm(x) < norm(source.loop()->points.front()) - margin)) continue;
    const double mag = std::hypot(grad.dx[k], grad.dy[k]);
    if (mag < 1e-14) continue;
    const BoundaryTrace eta = source.trace(x, {grad.dx[k] / mag, grad.dy[k] / mag});
    const double s = seminorm_h32(eta);
    if (!(s > 0.0)) continue;
    out.raw[k] = mag / (contrast * s);
    peak = std::max(peak, out.raw[k]);
  }
  if (peak > 0.0)
    for (std::size_t k = 0; k < grid.size(); ++k) out.field.values[k] = std::max(0.0, out.raw[k] / peak);
  return out;
}

// Relative L2 discrepancy between the explicit disk formula and the numeric
// dipole trace, both shifted to zero boundary mean.
inline double probing_agreement(const BackgroundModel& disk_model, Point x, Point d) {
  const auto& loop = disk_model.domain().loop();
  const BoundaryTrace exact = centered(probing_trace_disk(x, d, loop));
  const BoundaryTrace numeric = disk_model.solve_dipole(x, d);
  return boundary_norm(numeric - exact) / boundary_norm(exact);
}

// Normalized pairing K(x,y) = <eta_{x,dx}, eta_{y,dy}>_gamma / |eta_{x,dx}|_{H^{3/2}}.
inline double kernel_diagnostic(Point x, Point y, Point dx, Point dy, double gamma, const ProbingSource& source) {
  const BoundaryTrace ex = source.trace(x, dx);
  const double s = seminorm_h32(ex);
  if (!(s > 0.0)) throw NumericalError("probing trace has zero seminorm");
  return duality_product(ex, source.trace(y, dy), gamma) / s;
}

}  // namespace ddsm
