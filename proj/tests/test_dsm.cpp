#include <gtest/gtest.h>

#include <numbers>

#include "ddsm/dsm.hpp"
#include "ddsm/pipeline.hpp"

using namespace ddsm;

namespace {

struct Localization {
  CartesianGrid grid = CartesianGrid::square(64);
  std::shared_ptr<const Domain> domain = Domain::square(grid);
  std::shared_ptr<BackgroundModel> bg = std::make_shared<BackgroundModel>(domain);
  ConductivitySample sample;
  BoundaryTrace g, f;

  Localization() {
    sample.shapes = {Circle{{0.4, 0.3}, 0.3}};
    g = make_current(1, domain->loop());
    f = ntd_apply(DiffusionOperator(domain, conductivity_on_grid(sample, grid)), g, {});
  }
};

Localization& fixture() {
  static Localization l;
  return l;
}

}  // namespace

TEST(ProbingDisk, FormulaAtCenter) {
  const auto loop = BoundaryLoop::circle(64);
  const auto a = probing_trace_disk({0, 0}, {1, 0}, loop), b = probing_trace_disk({0, 0}, {0, 1}, loop);
  for (std::size_t m = 0; m < loop->size(); ++m) {
    EXPECT_NEAR(a.values[m], std::cos(loop->angles[m]) / std::numbers::pi, 1e-15);
    EXPECT_NEAR(b.values[m], std::sin(loop->angles[m]) / std::numbers::pi, 1e-15);
  }
}

TEST(ProbingDisk, AntisymmetricInDirection) {
  const auto loop = BoundaryLoop::circle(64);
  const Point x{0.2, -0.4}, d{0.8, 0.6};
  const auto a = probing_trace_disk(x, d, loop), b = probing_trace_disk(x, {-0.8, -0.6}, loop);
  for (std::size_t m = 0; m < loop->size(); ++m) EXPECT_EQ(a.values[m], -b.values[m]);
}

TEST(ProbingDisk, OutsidePointRejected) {
  const auto loop = BoundaryLoop::circle(64);
  EXPECT_THROW(probing_trace_disk({1.2, 0}, {1, 0}, loop), ConfigError);
  EXPECT_THROW(probing_trace_disk({0.95, 0}, {1, 0}, loop, 0.1), ConfigError);
}

TEST(ProbingAgreement, DiskOracleAndRefinement) {
  const BackgroundModel coarse(Domain::disk(CartesianGrid::square(64)));
  const BackgroundModel fine(Domain::disk(CartesianGrid::square(128)));
  const double e64 = probing_agreement(coarse, {0, 0}, {1, 0});
  const double e128 = probing_agreement(fine, {0, 0}, {1, 0});
  EXPECT_LE(e128, 0.05);
  EXPECT_LT(e128, e64);
  EXPECT_NEAR(probing_agreement(fine, {0.3, 0.2}, {0, 1}), probing_agreement(fine, {0.3, 0.2}, {0, -1}), 1e-12);
}

TEST(ProbingSource, TableMatchesDirectDipoleSolve) {
  auto bg = std::make_shared<BackgroundModel>(Domain::square(CartesianGrid::square(32)));
  const auto src = ProbingSource::numeric_dipole(bg);
  const Point x{0.137, -0.291}, d{std::cos(0.7), std::sin(0.7)};
  const auto a = src.trace(x, d), b = bg->solve_dipole(x, d);
  EXPECT_LT(boundary_norm(a - b), 1e-7 * boundary_norm(b));
}

TEST(Kernel, ConditionCOnDisk) {
  const auto loop = BoundaryLoop::circle(256);
  const auto src = ProbingSource::explicit_disk(loop);
  const Point y{0.3, -0.2}, d{1, 0};
  const double self = kernel_diagnostic(y, y, d, d, 1.5, src);
  EXPECT_GT(self, 0.0);
  for (double a = -0.6; a <= 0.61; a += 0.1)
    for (double b = -0.6; b <= 0.61; b += 0.1) {
      const Point x{a, b};
      if (norm(x - y) <= 0.1) continue;
      EXPECT_GT(self, kernel_diagnostic(x, y, d, d, 1.5, src)) << a << "," << b;
    }
}

TEST(Kernel, DecaysWithDistanceAndFlipsSign) {
  const auto src = ProbingSource::explicit_disk(BoundaryLoop::circle(256));
  const Point y{0, 0}, d{1, 0};
  double prev = kernel_diagnostic(y, y, d, d, 1.5, src);
  for (double r : {0.15, 0.3, 0.45, 0.6}) {
    const double k = kernel_diagnostic({r, 0}, y, d, d, 1.5, src);
    EXPECT_LT(k, prev) << r;
    prev = k;
  }
  const Point x{0.2, 0.1};
  EXPECT_NEAR(kernel_diagnostic(x, y, d, d, 1.0, src), -kernel_diagnostic(x, y, d, {-1, 0}, 1.0, src), 1e-12);
}

TEST(ClassicIndex, ZeroContrast) {
  auto& l = fixture();
  const auto src = ProbingSource::numeric_dipole(l.bg);
  const auto res = index_field_classic(l.bg->ntd(l.g), l.g, *l.bg, 1.0, src);
  EXPECT_TRUE(res.zero_contrast);
  for (double v : res.field.values) EXPECT_EQ(v, 0.0);
}

TEST(ClassicIndex, LocalizesSingleCircle) {
  auto& l = fixture();
  const auto src = ProbingSource::numeric_dipole(l.bg);
  const auto res = index_field_classic(l.f, l.g, *l.bg, 1.0, src);
  ASSERT_FALSE(res.zero_contrast);
  std::size_t best = 0;
  for (std::size_t k = 0; k < l.grid.size(); ++k)
    if (res.field.values[k] > res.field.values[best]) best = k;
  EXPECT_EQ(res.field.values[best], 1.0);
  EXPECT_TRUE(inside_inclusion(l.sample, l.grid.node(best)));
  for (double v : res.field.values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(ClassicIndex, ScaleInvariant) {
  auto& l = fixture();
  const auto src = ProbingSource::numeric_dipole(l.bg);
  const auto base = index_field_classic(l.f, l.g, *l.bg, 1.0, src);
  for (double alpha : {2.0, -1.0, 0.5}) {
    const auto s = index_field_classic(alpha * l.f, alpha * l.g, *l.bg, 1.0, src);
    EXPECT_EQ(s.field.values, base.field.values) << alpha;
  }
}

TEST(ClassicIndex, ExplicitAndNumericProbingAgreeOnDisk) {
  const auto grid = CartesianGrid::square(128);
  const auto disk = Domain::disk(grid);
  auto bg = std::make_shared<BackgroundModel>(disk);
  ConductivitySample s;
  s.shapes = {Circle{{0.3, 0.2}, 0.25}};
  const auto g = make_current(1, disk->loop());
  const auto f = ntd_apply(DiffusionOperator(disk, conductivity_on_grid(s, grid)), g, {});
  const auto a = index_field_classic(f, g, *bg, 1.0, ProbingSource::explicit_disk(disk->loop(), 2 * grid.h1()));
  const auto b = index_field_classic(f, g, *bg, 1.0, ProbingSource::numeric_dipole(bg));
  double e = 0;
  for (std::size_t k = 0; k < grid.size(); ++k)
    if (a.raw[k] > 0 && b.raw[k] > 0) e = std::max(e, std::abs(a.field.values[k] - b.field.values[k]));
  EXPECT_LE(e, 0.10);
}
