#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ddsm/error.hpp"
#include "ddsm/grid.hpp"
#include "ddsm/io.hpp"

namespace ddsm {

inline void require_same_grid(const IndexField& a, const IndexField& b) {
  const auto &g = a.grid, &h = b.grid;
  if (g.n1 != h.n1 || g.n2 != h.n2 || g.lo1 != h.lo1 || g.hi1 != h.hi1 || g.lo2 != h.lo2 || g.hi2 != h.hi2)
    throw ConfigError("fields live on different grids");
  if (a.values.size() != b.values.size()) throw ConfigError("field sizes differ");
}

struct MaskCounts {
  std::size_t both = 0, pred = 0, truth = 0, agree = 0, total = 0;
};

inline MaskCounts mask_counts(const IndexField& pred, const IndexField& truth, double threshold) {
  require_same_grid(pred, truth);
  MaskCounts c;
  c.total = pred.values.size();
  for (std::size_t k = 0; k < c.total; ++k) {
    const bool p = pred.values[k] > threshold, t = truth.values[k] > threshold;
    c.both += p && t;
    c.pred += p;
    c.truth += t;
    c.agree += p == t;
  }
  return c;
}

// Intersection over union of the thresholded masks; 1 when both are empty.
inline double iou(const IndexField& pred, const IndexField& truth, double threshold = 0.5) {
  const auto c = mask_counts(pred, truth, threshold);
  const std::size_t uni = c.pred + c.truth - c.both;
  return uni == 0 ? 1.0 : static_cast<double>(c.both) / static_cast<double>(uni);
}

inline double dice(const IndexField& pred, const IndexField& truth, double threshold = 0.5) {
  const auto c = mask_counts(pred, truth, threshold);
  const std::size_t s = c.pred + c.truth;
  return s == 0 ? 1.0 : 2.0 * static_cast<double>(c.both) / static_cast<double>(s);
}

inline double accuracy(const IndexField& pred, const IndexField& truth, double threshold = 0.5) {
  const auto c = mask_counts(pred, truth, threshold);
  return c.total == 0 ? 1.0 : static_cast<double>(c.agree) / static_cast<double>(c.total);
}

inline double mse(const IndexField& pred, const IndexField& truth) {
  require_same_grid(pred, truth);
  double s = 0.0;
  for (std::size_t k = 0; k < pred.values.size(); ++k) {
    const double d = std::clamp(pred.values[k], 0.0, 1.0) - truth.values[k];
    s += d * d;
  }
  return pred.values.empty() ? 0.0 : s / static_cast<double>(pred.values.size());
}

struct SampleScore {
  std::uint64_t sample = 0;
  double iou = 0.0, dice = 0.0, accuracy = 0.0, mse = 0.0;
};

inline SampleScore score(std::uint64_t sample, const IndexField& pred, const IndexField& truth, double threshold = 0.5) {
  return {sample, iou(pred, truth, threshold), dice(pred, truth, threshold), accuracy(pred, truth, threshold),
          mse(pred, truth)};
}

struct Stat {
  double mean = 0.0, stddev = 0.0;
};

inline Stat stat(const std::vector<double>& v) {
  Stat s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.stddev += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(v.size()));
  return s;
}

// Per-sample rows plus aggregates that are recomputed from the rows.
struct EvalReport {
  std::string label;
  std::vector<SampleScore> rows;
  std::string config_digest;

  Stat aggregate(double SampleScore::*field) const {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(r.*field);
    return stat(v);
  }
  Stat iou() const { return aggregate(&SampleScore::iou); }
  Stat dice() const { return aggregate(&SampleScore::dice); }
  Stat accuracy() const { return aggregate(&SampleScore::accuracy); }
  Stat mse() const { return aggregate(&SampleScore::mse); }

  // Digest of the configuration digest and every row, bit for bit.
  std::string digest() const {
    Fnv1a h;
    h.update(label);
    h.update(config_digest);
    for (const auto& r : rows) {
      h.update(r.sample);
      for (double x : {r.iou, r.dice, r.accuracy, r.mse}) h.update(x);
    }
    return h.hex();
  }
};

}  // namespace ddsm
