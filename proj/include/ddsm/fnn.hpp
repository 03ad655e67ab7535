#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "ddsm/error.hpp"
#include "ddsm/grid.hpp"
#include "ddsm/nn/layers.hpp"
#include "ddsm/nn/params.hpp"
#include "ddsm/nn/tape.hpp"
#include "ddsm/pipeline.hpp"

namespace ddsm {

struct FnnConfig {
  int patterns = 1;                 // N
  std::size_t width = 64;
  std::size_t blocks = 6;           // M
  std::ptrdiff_t gaussian_blocks = -1;  // leading Gaussian blocks; -1 means blocks / 2
  double bandwidth = 0.5;           // a
  bool radial_gaussian = false;
  double alpha = 0.01;
  double momentum = 0.0;
  std::size_t batch_samples = 16;   // |S_r|
  std::size_t batch_points = 1024;  // |K_r|
  std::size_t iterations = 100000;
  double inside_weight = 1.0;       // class weight of inclusion points in the loss
  bool scale_inputs = true;

  std::size_t input_length() const { return 2 * static_cast<std::size_t>(patterns) + 2; }
  std::size_t gaussian_count() const {
    return gaussian_blocks < 0 ? blocks / 2 : static_cast<std::size_t>(gaussian_blocks);
  }
  void validate() const {
    if (patterns < 1) throw ConfigError("FNN needs N >= 1");
    if (width < 2) throw ConfigError("FNN width must be at least 2");
    if (width < input_length()) throw ConfigError("FNN width must be >= 2(N+1)");
    if (gaussian_count() > blocks) throw ConfigError("more Gaussian blocks than blocks");
    if (!(bandwidth > 0.0)) throw ConfigError("Gaussian bandwidth must be positive");
    if (!(alpha > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch_samples < 1 || batch_points < 1) throw ConfigError("batch sizes must be positive");
  }
};

// Input row of node k: [x1, x2, dx phi^1..dx phi^N, dy phi^1..dy phi^N],
// zero-padded to `width`.
inline void build_input(const TrainingRecord& r, std::size_t k, int patterns, std::size_t width, double* row) {
  if (static_cast<int>(r.patterns()) < patterns) throw ConfigError("record has fewer Cauchy pairs than the model expects");
  const std::size_t n = static_cast<std::size_t>(patterns);
  if (width < 2 * n + 2) throw ConfigError("input width too small");
  const Point x = r.grid().node(k);
  std::fill(row, row + width, 0.0);
  row[0] = x.x1;
  row[1] = x.x2;
  for (std::size_t w = 0; w < n; ++w) {
    row[2 + w] = r.grad[w].dx[k];
    row[2 + n + w] = r.grad[w].dy[k];
  }
}

inline std::vector<double> build_input(const TrainingRecord& r, std::size_t k, int patterns, std::size_t width) {
  std::vector<double> row(width);
  build_input(r, k, patterns, width, row.data());
  return row;
}

// Pointwise classifier kappa o psi_out o tau_M o ... o tau_1 o psi_in with
// residual blocks tau(z) = act(W2 act(W1 z + b1) + b2) + z. Output column 0
// is the probability of lying inside an inclusion.
class FnnModel {
 public:
  FnnModel(FnnConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t w = cfg_.width;
    params_.add("input_scale", nn::Tensor({w}, 1.0), false);
    params_.add("in.w", nn::uniform_init({w, w}, w, rng));
    params_.add("in.b", nn::Tensor({w}, 0.0));
    for (std::size_t i = 0; i < cfg_.blocks; ++i) {
      const std::string p = "block" + std::to_string(i);
      params_.add(p + ".w1", nn::uniform_init({w, w}, w, rng));
      params_.add(p + ".b1", nn::Tensor({w}, 0.0));
      params_.add(p + ".w2", nn::uniform_init({w, w}, w, rng));
      params_.add(p + ".b2", nn::Tensor({w}, 0.0));
    }
    params_.add("out.w", nn::uniform_init({2, w}, w, rng));
    params_.add("out.b", nn::Tensor({2}, 0.0));
  }

  const FnnConfig& config() const { return cfg_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }

  // rows [B, width] -> logits [B, 2]
  nn::Var forward(nn::Tape& t, nn::Var rows) {
    using namespace nn;
    const Tensor& in = t.value(rows);
    require_rank(in, 2, "FNN input");
    if (in.dim(1) != cfg_.width) throw ConfigError("FNN input width mismatch");
    if (cfg_.scale_inputs) rows = scale_axis1(t, rows, params_.at("input_scale").value);
    Var z = dense(t, t.param(params_, "in.w"), t.param(params_, "in.b"), rows);
    for (std::size_t i = 0; i < cfg_.blocks; ++i) {
      const std::string p = "block" + std::to_string(i);
      const bool gauss = i < cfg_.gaussian_count();
      auto act = [&](Var v) {
        if (!gauss) return clipped_relu(t, v);
        return cfg_.radial_gaussian ? gaussian_radial(t, v, cfg_.bandwidth) : gaussian_activation(t, v, cfg_.bandwidth);
      };
      Var h = act(dense(t, t.param(params_, p + ".w1"), t.param(params_, p + ".b1"), z));
      h = act(dense(t, t.param(params_, p + ".w2"), t.param(params_, p + ".b2"), h));
      z = add(t, h, z);
    }
    return dense(t, t.param(params_, "out.w"), t.param(params_, "out.b"), z);
  }

  // p_inside for each row of [B, width] inputs.
  std::vector<double> predict_rows(nn::Tensor rows) {
    nn::Tape t;
    const nn::Var logits = forward(t, t.input(std::move(rows)));
    const nn::Tensor p = nn::softmax(t.value(logits));
    std::vector<double> out(p.dim(0));
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = p[2 * r];
    return out;
  }

  IndexField predict_field(const TrainingRecord& r) {
    const auto& g = r.grid();
    nn::Tensor rows({g.size(), cfg_.width});
    for (std::size_t k = 0; k < g.size(); ++k) build_input(r, k, cfg_.patterns, cfg_.width, rows.ptr() + k * cfg_.width);
    IndexField f(g);
    f.values = predict_rows(std::move(rows));
    return f;
  }

  // Sets input_scale to 1 / RMS of each input coordinate over the records.
  void calibrate_inputs(const std::vector<const TrainingRecord*>& records) {
    if (!cfg_.scale_inputs || records.empty()) return;
    const std::size_t w = cfg_.width;
    std::vector<double> sq(w, 0.0), row(w);
    double count = 0.0;
    for (const auto* r : records)
      for (std::size_t k = 0; k < r->grid().size(); ++k) {
        build_input(*r, k, cfg_.patterns, w, row.data());
        for (std::size_t c = 0; c < w; ++c) sq[c] += row[c] * row[c];
        count += 1.0;
      }
    auto& scale = params_.at("input_scale").value;
    for (std::size_t c = 0; c < w; ++c) {
      const double rms = std::sqrt(sq[c] / count);
      scale[c] = rms > 1e-12 ? 1.0 / rms : 1.0;
    }
  }

 private:
  FnnConfig cfg_;
  nn::ParameterStore params_;
};

// Called after every iteration with (iteration index, loss); returning false
// stops training.
using TrainMonitor = std::function<bool(std::size_t, double)>;

struct TrainResult {
  std::vector<double> loss;
};

inline std::vector<const TrainingRecord*> record_pointers(const std::vector<TrainingRecord>& records) {
  std::vector<const TrainingRecord*> out;
  for (const auto& r : records) out.push_back(&r);
  return out;
}

// Picks `count` distinct indices out of [0, n) (all of them, shuffled, when count >= n).
template <class Rng>
std::vector<std::size_t> choose(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  count = std::min(count, n);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  return idx;
}

// Minibatch SGD on the cross-entropy: each iteration draws |S_r| records and
// one shared set of |K_r| grid nodes.
inline TrainResult train_fnn(FnnModel& model, const std::vector<const TrainingRecord*>& records, std::uint64_t seed,
                             const TrainMonitor& monitor = {}) {
  const auto& cfg = model.config();
  if (records.empty()) throw ConfigError("empty training set");
  for (const auto* r : records)
    if (static_cast<int>(r->patterns()) < cfg.patterns) throw ConfigError("training record has too few Cauchy pairs");
  model.calibrate_inputs(records);
  std::mt19937_64 rng(seed);
  nn::Sgd opt(cfg.alpha, cfg.momentum);
  TrainResult res;
  const std::size_t nodes = records.front()->grid().size();
  const std::vector<double> weights{cfg.inside_weight, 1.0};
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto samples = choose(records.size(), cfg.batch_samples, rng);
    const auto points = choose(nodes, cfg.batch_points, rng);
    const std::size_t rows = samples.size() * points.size();
    nn::Tensor x({rows, cfg.width});
    std::vector<int> labels(rows);
    std::size_t row = 0;
    for (std::size_t s : samples)
      for (std::size_t k : points) {
        build_input(*records[s], k, cfg.patterns, cfg.width, x.ptr() + row * cfg.width);
        labels[row++] = records[s]->truth.values[k] > 0.5 ? 0 : 1;
      }
    double loss = 0.0;
    try {
      nn::Tape t;
      const nn::Var logits = model.forward(t, t.input(std::move(x)));
      const nn::Var l = nn::softmax_xent(t, logits, labels, weights);
      loss = t.value(l)[0];
      model.params().zero_grad();
      t.backward(l);
    } catch (const NumericalError& e) {
      throw NumericalError("FNN training diverged at iteration " + std::to_string(it) + ": " + e.what());
    }
    opt.step(model.params());
    res.loss.push_back(loss);
    if (monitor && !monitor(it, loss)) break;
  }
  return res;
}

}  // namespace ddsm
