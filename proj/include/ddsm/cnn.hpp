#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ddsm/error.hpp"
#include "ddsm/fnn.hpp"
#include "ddsm/grid.hpp"
#include "ddsm/nn/layers.hpp"
#include "ddsm/nn/params.hpp"
#include "ddsm/nn/tape.hpp"
#include "ddsm/pipeline.hpp"

namespace ddsm {

struct CnnConfig {
  int patterns = 1;  // N
  std::vector<std::size_t> channels{16, 32, 64};  // one entry per encoder level
  double alpha = 0.01;
  double momentum = 0.0;
  std::size_t batch_samples = 8;
  std::size_t iterations = 20000;
  bool scale_inputs = true;

  std::size_t input_channels() const { return static_cast<std::size_t>(patterns) + 2; }
  void validate() const {
    if (patterns < 1) throw ConfigError("CNN needs N >= 1");
    if (channels.empty()) throw ConfigError("CNN needs at least one level");
    for (auto c : channels)
      if (c == 0) throw ConfigError("CNN channel counts must be positive");
    if (!(alpha > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch_samples < 1) throw ConfigError("batch size must be positive");
  }
  void validate_grid(const CartesianGrid& g) const {
    const std::size_t f = std::size_t{1} << channels.size();
    if (g.n1 % f || g.n2 % f) throw ConfigError("grid size must be divisible by 2^levels");
  }
};

// [1, N+2, n2, n1]: channels x1, x2, phi^1..phi^N.
inline nn::Tensor build_input_tensor(const TrainingRecord& r, int patterns) {
  if (static_cast<int>(r.patterns()) < patterns) throw ConfigError("record has fewer Cauchy pairs than the model expects");
  const auto& g = r.grid();
  const std::size_t plane = g.size(), n = static_cast<std::size_t>(patterns);
  nn::Tensor t({1, n + 2, g.n2, g.n1});
  for (std::size_t k = 0; k < plane; ++k) {
    const Point x = g.node(k);
    t[k] = x.x1;
    t[plane + k] = x.x2;
    for (std::size_t w = 0; w < n; ++w) t[(2 + w) * plane + k] = r.phi[w].values[k];
  }
  return t;
}

inline nn::Tensor truth_tensor(const TrainingRecord& r) {
  const auto& g = r.grid();
  return nn::Tensor({1, 1, g.n2, g.n1}, r.truth.values);
}

// Stacks [1,C,H,W] tensors along the batch axis.
inline nn::Tensor stack(const std::vector<nn::Tensor>& parts) {
  if (parts.empty()) throw ConfigError("nothing to stack");
  auto shape = parts.front().shape;
  const std::size_t each = parts.front().size();
  shape[0] = parts.size();
  nn::Tensor out(shape);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].shape != parts.front().shape) throw ConfigError("stacked tensors differ in shape");
    std::copy(parts[i].data.begin(), parts[i].data.end(), out.data.begin() + i * each);
  }
  return out;
}

// U-Net. Encoder level l: conv3x3 -> BN -> sigmoid (kept as skip), then 2x2
// max pooling. Decoder level l: transposed conv k2 s2 -> sigmoid, concat with
// skip l, conv3x3 -> BN -> sigmoid. Head: 1x1 conv -> sigmoid.
class CnnModel {
 public:
  CnnModel(CnnConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t cin = cfg_.input_channels();
    params_.add("input_scale", nn::Tensor({cin}, 1.0), false);
    std::size_t prev = cin;
    for (std::size_t l = 0; l < levels(); ++l) {
      const std::size_t c = cfg_.channels[l];
      add_conv("enc" + std::to_string(l), c, prev, 3, rng);
      add_bn("enc" + std::to_string(l), c);
      prev = c;
    }
    for (std::size_t l = levels(); l-- > 0;) {
      const std::size_t c = cfg_.channels[l];
      const std::string p = "dec" + std::to_string(l);
      // transposed conv weight [c_in, c_out, 2, 2]
      params_.add(p + ".up.w", nn::uniform_init({prev, c, 2, 2}, prev, rng));
      params_.add(p + ".up.b", nn::Tensor({c}, 0.0));
      add_conv(p, c, 2 * c, 3, rng);
      add_bn(p, c);
      prev = c;
    }
    add_conv("head", 1, prev, 1, rng);
  }

  const CnnConfig& config() const { return cfg_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }
  std::size_t levels() const { return cfg_.channels.size(); }

  // x: [B, N+2, n2, n1] -> [B, 1, n2, n1] in (0,1)
  nn::Var forward(nn::Tape& t, nn::Var x, nn::Mode mode) {
    using namespace nn;
    const Tensor& in = t.value(x);
    require_rank(in, 4, "CNN input");
    const std::size_t cin = cfg_.input_channels();
    if (in.dim(1) != cin) throw ConfigError("CNN input has " + std::to_string(in.dim(1)) + " channels, expected " + std::to_string(cin));
    const std::size_t f = std::size_t{1} << levels();
    if (in.dim(2) % f || in.dim(3) % f) throw ConfigError("grid size must be divisible by 2^levels");
    std::vector<Var> skips;
    Var h = cfg_.scale_inputs ? scale_axis1(t, x, params_.at("input_scale").value) : x;
    for (std::size_t l = 0; l < levels(); ++l) {
      h = conv_bn_sigmoid(t, "enc" + std::to_string(l), h, mode);
      skips.push_back(h);
      h = maxpool2(t, h);
    }
    for (std::size_t l = levels(); l-- > 0;) {
      const std::string p = "dec" + std::to_string(l);
      h = sigmoid(t, transposed_conv2d(t, h, t.param(params_, p + ".up.w"), t.param(params_, p + ".up.b"), 2, 0));
      h = concat(t, h, skips[l]);
      h = conv_bn_sigmoid(t, p, h, mode);
    }
    return sigmoid(t, conv2d(t, h, t.param(params_, "head.w"), t.param(params_, "head.b"), 1, 0));
  }

  nn::Tensor predict(nn::Tensor x) {
    nn::Tape t;
    const nn::Var y = forward(t, t.input(std::move(x)), nn::Mode::eval);
    return t.value(y);
  }

  IndexField predict_field(const TrainingRecord& r) {
    const auto y = predict(build_input_tensor(r, cfg_.patterns));
    IndexField f(r.grid());
    f.values.assign(y.data.begin(), y.data.end());
    return f;
  }

  // Sets input_scale to 1 / RMS of each input channel over the records.
  void calibrate_inputs(const std::vector<const TrainingRecord*>& records) {
    if (!cfg_.scale_inputs || records.empty()) return;
    const std::size_t cin = cfg_.input_channels();
    std::vector<double> sq(cin, 0.0);
    double count = 0.0;
    for (const auto* r : records) {
      const auto x = build_input_tensor(*r, cfg_.patterns);
      const std::size_t plane = x.dim(2) * x.dim(3);
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t i = 0; i < plane; ++i) sq[c] += x[c * plane + i] * x[c * plane + i];
      count += static_cast<double>(plane);
    }
    auto& s = params_.at("input_scale").value;
    for (std::size_t c = 0; c < cin; ++c) {
      const double rms = std::sqrt(sq[c] / count);
      s[c] = rms > 1e-12 ? 1.0 / rms : 1.0;
    }
  }

 private:
  template <class Rng>
  void add_conv(const std::string& p, std::size_t out, std::size_t in, std::size_t k, Rng& rng) {
    params_.add(p + ".w", nn::uniform_init({out, in, k, k}, in * k * k, rng));
    params_.add(p + ".b", nn::Tensor({out}, 0.0));
  }
  void add_bn(const std::string& p, std::size_t c) {
    params_.add(p + ".bn.scale", nn::Tensor({c}, 1.0));
    params_.add(p + ".bn.shift", nn::Tensor({c}, 0.0));
    params_.add(p + ".bn.mean", nn::Tensor({c}, 0.0), false);
    params_.add(p + ".bn.var", nn::Tensor({c}, 1.0), false);
  }
  nn::Var conv_bn_sigmoid(nn::Tape& t, const std::string& p, nn::Var x, nn::Mode mode) {
    using namespace nn;
    Var h = conv2d(t, x, t.param(params_, p + ".w"), t.param(params_, p + ".b"), 1, 1);
    h = batchnorm(t, h, t.param(params_, p + ".bn.scale"), t.param(params_, p + ".bn.shift"),
                  params_.at(p + ".bn.mean").value, params_.at(p + ".bn.var").value, mode);
    return sigmoid(t, h);
  }

  CnnConfig cfg_;
  nn::ParameterStore params_;
};

// Minibatch SGD on the pixelwise MSE against the inclusion indicator.
inline TrainResult train_cnn(CnnModel& model, const std::vector<const TrainingRecord*>& records, std::uint64_t seed,
                             const TrainMonitor& monitor = {}) {
  const auto& cfg = model.config();
  if (records.empty()) throw ConfigError("empty training set");
  for (const auto* r : records) {
    if (static_cast<int>(r->patterns()) < cfg.patterns) throw ConfigError("training record has too few Cauchy pairs");
    cfg.validate_grid(r->grid());
  }
  model.calibrate_inputs(records);
  std::mt19937_64 rng(seed);
  nn::Sgd opt(cfg.alpha, cfg.momentum);
  TrainResult res;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto samples = choose(records.size(), cfg.batch_samples, rng);
    std::vector<nn::Tensor> xs, ys;
    for (std::size_t s : samples) {
      xs.push_back(build_input_tensor(*records[s], cfg.patterns));
      ys.push_back(truth_tensor(*records[s]));
    }
    double loss = 0.0;
    try {
      nn::Tape t;
      const nn::Var y = model.forward(t, t.input(stack(xs)), nn::Mode::train);
      const nn::Var l = nn::mse(t, y, stack(ys));
      loss = t.value(l)[0];
      model.params().zero_grad();
      t.backward(l);
    } catch (const NumericalError& e) {
      throw NumericalError("CNN training diverged at iteration " + std::to_string(it) + ": " + e.what());
    }
    opt.step(model.params());
    res.loss.push_back(loss);
    if (monitor && !monitor(it, loss)) break;
  }
  return res;
}

}  // namespace ddsm
