#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ddsm/domain.hpp"
#include "ddsm/error.hpp"
#include "ddsm/forward.hpp"
#include "ddsm/grid.hpp"
#include "ddsm/io.hpp"

namespace ddsm {

// g_w = cos(w theta) on the loop, shifted to zero boundary integral.
inline BoundaryTrace make_current(int omega, const std::shared_ptr<const BoundaryLoop>& loop) {
  if (omega < 1) throw ConfigError("current pattern index must be >= 1");
  BoundaryTrace t(loop);
  for (std::size_t m = 0; m < loop->size(); ++m) t.values[m] = std::cos(omega * loop->angles[m]);
  return centered(std::move(t));
}

struct NoiseSpec {
  double delta = 0.0;
  std::uint64_t seed = 0;
  bool per_trace = false;  // one G per trace instead of one per node

  void validate() const {
    if (!(delta >= 0.0)) throw ConfigError("noise level must be non-negative");
  }
};

// f -> (1 + delta G) f with G ~ N(0,1), then re-centered. Draws come from the
// caller's stream so that consecutive traces use consecutive draws.
template <class Rng>
BoundaryTrace add_noise(const BoundaryTrace& f, double delta, bool per_trace, Rng& rng) {
  if (!(delta >= 0.0)) throw ConfigError("noise level must be non-negative");
  if (delta == 0.0) return f;
  std::normal_distribution<double> normal(0.0, 1.0);
  BoundaryTrace out = f;
  if (per_trace) {
    const double s = 1.0 + delta * normal(rng);
    for (auto& v : out.values) v *= s;
  } else {
    for (auto& v : out.values) v *= 1.0 + delta * normal(rng);
  }
  return centered(std::move(out));
}

inline BoundaryTrace add_noise(const BoundaryTrace& f, const NoiseSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  return add_noise(f, spec.delta, spec.per_trace, rng);
}

inline double relative_difference(const BoundaryTrace& f1, const BoundaryTrace& f2) {
  const double n1 = boundary_norm(f1);
  if (n1 == 0.0) throw NumericalError("relative difference against a zero trace");
  return boundary_norm(f1 - f2) / n1;
}

struct CauchyPair {
  BoundaryTrace g;
  BoundaryTrace f;
  int omega = 0;
};

struct TrainingRecord {
  std::uint64_t index = 0;
  ConductivitySample sample;
  ScalarField sigma;
  IndexField truth;
  std::vector<CauchyPair> pairs;
  std::vector<ScalarField> phi;
  std::vector<VectorField> grad;

  std::size_t patterns() const { return pairs.size(); }
  const CartesianGrid& grid() const { return sigma.grid; }
};

// Keeps the first n patterns of a record.
inline TrainingRecord first_patterns(const TrainingRecord& r, std::size_t n) {
  if (n > r.patterns()) throw ConfigError("record has fewer patterns than requested");
  TrainingRecord out;
  out.index = r.index;
  out.sample = r.sample;
  out.sigma = r.sigma;
  out.truth = r.truth;
  out.pairs.assign(r.pairs.begin(), r.pairs.begin() + static_cast<std::ptrdiff_t>(n));
  out.phi.assign(r.phi.begin(), r.phi.begin() + static_cast<std::ptrdiff_t>(n));
  out.grad.assign(r.grad.begin(), r.grad.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

// Shared state for building records on one grid: the background operator and
// the per-pattern currents and background voltages Lambda_0 g_w.
class RecordBuilder {
 public:
  explicit RecordBuilder(const CartesianGrid& grid, SolverConfig cfg = {})
      : domain_(Domain::square(grid)), background_(std::make_shared<BackgroundModel>(domain_, cfg)), cfg_(cfg) {}

  const std::shared_ptr<const Domain>& domain() const { return domain_; }
  const std::shared_ptr<BackgroundModel>& background() const { return background_; }
  const CartesianGrid& grid() const { return domain_->grid(); }

  const CauchyPair& background_pair(int omega) const {
    std::lock_guard lock(mu_);
    auto it = cache_.find(omega);
    if (it == cache_.end()) {
      CauchyPair p;
      p.omega = omega;
      p.g = make_current(omega, domain_->loop());
      p.f = background_->ntd(p.g);
      it = cache_.emplace(omega, std::move(p)).first;
    }
    return it->second;
  }

  // Recomputes phi and grad phi of pattern w from the record's current f.
  void refresh_potential(TrainingRecord& r, std::size_t w) const {
    const auto& bg = background_pair(r.pairs[w].omega);
    r.phi[w] = background_->solve_phi(centered(r.pairs[w].f - bg.f), 0.0);
    r.grad[w] = gradient_field(r.phi[w]);
  }

  TrainingRecord build(const ConductivitySample& sample, int patterns, const NoiseSpec& noise,
                       std::uint64_t index = 0) const {
    if (patterns < 1) throw ConfigError("need at least one Cauchy pair");
    noise.validate();
    TrainingRecord r;
    r.index = index;
    r.sample = sample;
    r.sigma = conductivity_on_grid(sample, grid());
    r.truth = ground_truth_index(sample, grid());
    try {
      const DiffusionOperator op(domain_, r.sigma);
      std::mt19937_64 rng(noise.seed);
      for (int w = 1; w <= patterns; ++w) {
        CauchyPair p;
        p.omega = w;
        p.g = background_pair(w).g;
        p.f = ntd_apply(op, p.g, cfg_);
        if (noise.delta > 0.0) p.f = add_noise(p.f, noise.delta, noise.per_trace, rng);
        r.pairs.push_back(std::move(p));
        r.phi.emplace_back();
        r.grad.emplace_back();
        refresh_potential(r, r.pairs.size() - 1);
      }
    } catch (const NumericalError& e) {
      throw NumericalError("record " + std::to_string(index) + ": " + e.what());
    }
    return r;
  }

  // Copy of a clean record with test-time noise on every voltage trace.
  TrainingRecord with_noise(const TrainingRecord& clean, const NoiseSpec& noise) const {
    noise.validate();
    TrainingRecord r = clean;
    std::mt19937_64 rng(noise.seed);
    for (std::size_t w = 0; w < r.patterns(); ++w) {
      r.pairs[w].f = add_noise(r.pairs[w].f, noise.delta, noise.per_trace, rng);
      refresh_potential(r, w);
    }
    return r;
  }

 private:
  std::shared_ptr<const Domain> domain_;
  std::shared_ptr<BackgroundModel> background_;
  SolverConfig cfg_;
  mutable std::mutex mu_;
  mutable std::map<int, CauchyPair> cache_;
};

inline TrainingRecord build_record(const ConductivitySample& sample, const CartesianGrid& grid, int patterns,
                                   const NoiseSpec& noise, const SolverConfig& cfg = {}) {
  return RecordBuilder(grid, cfg).build(sample, patterns, noise);
}

// ---------------------------------------------------------------------------
// Record container

inline constexpr std::uint32_t kRecordVersion = 1;

inline std::string encode_record(const TrainingRecord& r) {
  const auto& g = r.grid();
  const std::uint64_t n1 = g.n1, n2 = g.n2;
  ByteWriter w;
  w.raw("EITD");
  w.u32(kRecordVersion);
  w.u64(r.index);
  w.u32(static_cast<std::uint32_t>(g.n1));
  w.u32(static_cast<std::uint32_t>(g.n2));
  for (double b : {g.lo1, g.hi1, g.lo2, g.hi2}) w.f64(b);
  w.u32(static_cast<std::uint32_t>(r.patterns()));
  w.u32(static_cast<std::uint32_t>(r.sample.shapes.size()));
  for (const auto& s : r.sample.shapes) {
    if (const auto* c = std::get_if<Circle>(&s)) {
      w.u32(0);
      for (double v : {c->center.x1, c->center.x2, c->radius, 0.0, 0.0}) w.f64(v);
    } else {
      const auto& e = std::get<Ellipse>(s);
      w.u32(1);
      for (double v : {e.center.x1, e.center.x2, e.semi_major, e.semi_minor, e.rotation}) w.f64(v);
    }
  }
  w.f64(r.sample.sigma_inclusion);
  w.f64(r.sample.sigma_background);
  w.array({n2, n1}, r.sigma.values.data());
  w.array({n2, n1}, r.truth.values.data());
  for (std::size_t k = 0; k < r.patterns(); ++k) {
    w.u32(static_cast<std::uint32_t>(r.pairs[k].omega));
    w.array({r.pairs[k].g.size()}, r.pairs[k].g.values.data());
    w.array({r.pairs[k].f.size()}, r.pairs[k].f.values.data());
    w.array({n2, n1}, r.phi[k].values.data());
    std::vector<double> grad(r.grad[k].dx);
    grad.insert(grad.end(), r.grad[k].dy.begin(), r.grad[k].dy.end());
    w.array({2, n2, n1}, grad.data());
  }
  return w.bytes();
}

inline TrainingRecord decode_record(std::string_view bytes) {
  ByteReader rd(bytes);
  if (rd.raw(4) != "EITD") throw IoError("not a record blob (bad magic)");
  if (rd.u32() != kRecordVersion) throw IoError("unsupported record version");
  TrainingRecord r;
  r.index = rd.u64();
  CartesianGrid g;
  g.n1 = rd.u32();
  g.n2 = rd.u32();
  g.lo1 = rd.f64();
  g.hi1 = rd.f64();
  g.lo2 = rd.f64();
  g.hi2 = rd.f64();
  g.validate();
  const auto patterns = rd.u32();
  const auto shapes = rd.u32();
  for (std::uint32_t s = 0; s < shapes; ++s) {
    const auto kind = rd.u32();
    double v[5];
    for (double& x : v) x = rd.f64();
    if (kind == 0)
      r.sample.shapes.push_back(Circle{{v[0], v[1]}, v[2]});
    else if (kind == 1)
      r.sample.shapes.push_back(Ellipse{{v[0], v[1]}, v[2], v[3], v[4]});
    else
      throw IoError("unknown shape kind");
  }
  r.sample.sigma_inclusion = rd.f64();
  r.sample.sigma_background = rd.f64();
  std::vector<std::uint64_t> dims;
  auto grid_array = [&](std::size_t rank) {
    auto v = rd.array(dims);
    if (dims.size() != rank || dims[rank - 1] != g.n1 || dims[rank - 2] != g.n2) throw IoError("array shape mismatch");
    return v;
  };
  r.sigma = ScalarField(g);
  r.sigma.values = grid_array(2);
  r.truth = IndexField(g);
  r.truth.values = grid_array(2);
  const auto domain = Domain::square(g);
  for (std::uint32_t k = 0; k < patterns; ++k) {
    CauchyPair p;
    p.omega = static_cast<int>(rd.u32());
    p.g = BoundaryTrace(domain->loop(), rd.array(dims));
    p.f = BoundaryTrace(domain->loop(), rd.array(dims));
    r.pairs.push_back(std::move(p));
    ScalarField phi(g);
    phi.values = grid_array(2);
    r.phi.push_back(std::move(phi));
    auto grad = grid_array(3);
    VectorField vf(g);
    std::copy(grad.begin(), grad.begin() + static_cast<std::ptrdiff_t>(g.size()), vf.dx.begin());
    std::copy(grad.begin() + static_cast<std::ptrdiff_t>(g.size()), grad.end(), vf.dy.begin());
    r.grad.push_back(std::move(vf));
  }
  if (!rd.done()) throw IoError("trailing bytes after record");
  return r;
}

// ---------------------------------------------------------------------------
// Datasets

struct DatasetSpec {
  int scenario = 1;
  std::size_t count = 800;
  int patterns = 10;
  CartesianGrid grid = CartesianGrid::square(64);
  std::uint64_t seed = 1;
  NoiseSpec noise;  // seed ignored; each record derives its own
  SolverConfig solver;

  void validate() const {
    if (scenario < 0 || scenario > 3) throw ConfigError("scenario must be 1, 2 or 3 (0: no inclusions)");
    if (count < 1) throw ConfigError("dataset needs at least one record");
    if (patterns < 1) throw ConfigError("dataset needs at least one Cauchy pair per record");
    grid.validate();
    noise.validate();
    solver.validate();
  }
};

struct CauchyDataset {
  DatasetSpec spec;
  std::vector<TrainingRecord> records;
};

// Record i uses seed stream (master, i, 0) for its shapes and (master, i, 1)
// for its noise, so every record is reproducible on its own.
inline ConductivitySample sample_for_record(const DatasetSpec& spec, std::uint64_t index) {
  if (spec.scenario == 0) return {};
  std::mt19937_64 rng(derive_seed(spec.seed, index, 0));
  return sample_scenario(spec.scenario, rng);
}

inline TrainingRecord make_record(const DatasetSpec& spec, const RecordBuilder& builder, std::uint64_t index) {
  NoiseSpec noise = spec.noise;
  noise.seed = derive_seed(spec.seed, index, 1);
  return builder.build(sample_for_record(spec, index), spec.patterns, noise, index);
}

inline CauchyDataset generate_records(const DatasetSpec& spec) {
  spec.validate();
  RecordBuilder builder(spec.grid, spec.solver);
  CauchyDataset ds{spec, {}};
  ds.records.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) ds.records.push_back(make_record(spec, builder, i));
  return ds;
}

inline CauchyDataset first_patterns(const CauchyDataset& ds, int n) {
  CauchyDataset out{ds.spec, {}};
  out.spec.patterns = n;
  for (const auto& r : ds.records) out.records.push_back(first_patterns(r, static_cast<std::size_t>(n)));
  return out;
}

// Decimal form that parses back to the same double.
inline std::string exact_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string record_file_name(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "record_%06llu.eitd", static_cast<unsigned long long>(index));
  return buf;
}

struct Manifest {
  std::map<std::string, std::string> entries;

  std::string get(const std::string& key) const {
    auto it = entries.find(key);
    if (it == entries.end()) throw IoError("manifest lacks key " + key);
    return it->second;
  }
  std::string text() const {
    std::string s;
    for (const auto& [k, v] : entries) s += k + " = " + v + "\n";
    return s;
  }
  static Manifest parse(const std::string& text) {
    Manifest m;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw IoError("malformed manifest line: " + line);
      m.entries[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return m;
  }
};

// Writes manifest.txt plus one blob per record into out_dir. The directory is
// assembled under a temporary name and renamed at the end; on failure nothing
// is left behind.
inline Manifest write_dataset(const CauchyDataset& ds, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  const fs::path tmp = out_dir.string() + ".partial";
  try {
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    Fnv1a digest;
    for (const auto& r : ds.records) {
      const std::string blob = encode_record(r);
      digest.update(blob);
      write_file((tmp / record_file_name(r.index)).string(), blob);
    }
    Manifest m;
    const auto& s = ds.spec;
    m.entries = {{"format", "EITD"},
                 {"format_version", std::to_string(kRecordVersion)},
                 {"scenario", std::to_string(s.scenario)},
                 {"count", std::to_string(ds.records.size())},
                 {"patterns", std::to_string(s.patterns)},
                 {"n1", std::to_string(s.grid.n1)},
                 {"n2", std::to_string(s.grid.n2)},
                 {"seed", std::to_string(s.seed)},
                 {"noise_delta", exact_text(s.noise.delta)},
                 {"noise_per_trace", s.noise.per_trace ? "1" : "0"},
                 {"solver_tolerance", exact_text(s.solver.tolerance)},
                 {"digest", digest.hex()}};
    write_file((tmp / "manifest.txt").string(), m.text());
    fs::remove_all(out_dir);
    fs::rename(tmp, out_dir);
    return m;
  } catch (const fs::filesystem_error& e) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw IoError(e.what());
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
}

inline Manifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir) {
  return write_dataset(generate_records(spec), out_dir);
}

inline CauchyDataset load_dataset(const std::filesystem::path& dir) {
  const Manifest m = Manifest::parse(read_file((dir / "manifest.txt").string()));
  if (m.get("format") != "EITD") throw IoError("unknown dataset format");
  CauchyDataset ds;
  try {
    ds.spec.scenario = std::stoi(m.get("scenario"));
    ds.spec.count = std::stoull(m.get("count"));
    ds.spec.patterns = std::stoi(m.get("patterns"));
    ds.spec.grid.n1 = std::stoull(m.get("n1"));
    ds.spec.grid.n2 = std::stoull(m.get("n2"));
    ds.spec.seed = std::stoull(m.get("seed"));
    ds.spec.noise.delta = std::stod(m.get("noise_delta"));
    ds.spec.noise.per_trace = m.get("noise_per_trace") == "1";
    ds.spec.solver.tolerance = std::stod(m.get("solver_tolerance"));
  } catch (const std::logic_error&) {
    throw IoError("malformed manifest value");
  }
  Fnv1a digest;
  for (std::size_t i = 0; i < ds.spec.count; ++i) {
    const std::string blob = read_file((dir / record_file_name(i)).string());
    digest.update(blob);
    ds.records.push_back(decode_record(blob));
  }
  if (digest.hex() != m.get("digest")) throw IoError("dataset digest mismatch");
  return ds;
}

// ---------------------------------------------------------------------------
// Center-inclusion sensitivity

// Four circles shield a small circle at the center. sigma_1 keeps the center
// circle, sigma_2 drops it.
struct SensitivityConfig {
  CartesianGrid grid = CartesianGrid::square(64);
  std::vector<Circle> surround{{{0.55, 0.0}, 0.25}, {{-0.55, 0.0}, 0.25}, {{0.0, 0.55}, 0.25}, {{0.0, -0.55}, 0.25}};
  Circle center{{0.0, 0.0}, 0.2};
  int max_omega = 20;
  SolverConfig solver;

  ConductivitySample with_center() const {
    ConductivitySample s = without_center();
    s.shapes.push_back(center);
    return s;
  }
  ConductivitySample without_center() const {
    ConductivitySample s;
    for (const auto& c : surround) s.shapes.push_back(c);
    return s;
  }
};

// Relative boundary difference ||u_1 - u_2|| / ||u_1|| for w = 1..max_omega.
inline std::vector<double> center_sensitivity(const SensitivityConfig& cfg) {
  const auto domain = Domain::square(cfg.grid);
  const DiffusionOperator op1(domain, conductivity_on_grid(cfg.with_center(), cfg.grid));
  const DiffusionOperator op2(domain, conductivity_on_grid(cfg.without_center(), cfg.grid));
  std::vector<double> out;
  for (int w = 1; w <= cfg.max_omega; ++w) {
    const BoundaryTrace g = make_current(w, domain->loop());
    out.push_back(relative_difference(ntd_apply(op1, g, cfg.solver), ntd_apply(op2, g, cfg.solver)));
  }
  return out;
}

}  // namespace ddsm
