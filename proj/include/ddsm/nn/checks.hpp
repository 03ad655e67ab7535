#pragma once

#include <random>
#include <string>
#include <vector>

#include "ddsm/cnn.hpp"
#include "ddsm/fnn.hpp"
#include "ddsm/nn/gradcheck.hpp"
#include "ddsm/nn/layers.hpp"

namespace ddsm::nn {

struct NamedCheck {
  std::string name;
  GradCheckReport report;
  double tolerance = 0.0;
  bool pass() const { return report.max_rel_error <= tolerance; }
};

template <class Rng>
Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = u(rng);
  return t;
}

// Squared distance to a fixed random target, so every output coordinate
// carries gradient.
inline Var probe_loss(Tape& t, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return mse(t, y, random_tensor(t.value(y).shape, rng));
}

// Every differentiable layer on small random shapes (tolerance 1e-5) and both
// full toy models (tolerance 1e-4).
inline std::vector<NamedCheck> standard_gradchecks(std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::vector<NamedCheck> out;
  const double layer_tol = 1e-5, model_tol = 1e-4;
  auto run = [&](const std::string& name, ParameterStore& p, std::vector<Tensor> inputs, const LossBuilder& build, double tol) {
    out.push_back({name, grad_check(p, std::move(inputs), build), tol});
  };
  {
    ParameterStore p;
    p.add("w", random_tensor({8, 8}, rng));
    p.add("b", random_tensor({8}, rng));
    run("dense", p, {random_tensor({3, 8}, rng)}, [](Tape& t, ParameterStore& p, const std::vector<Var>& in) {
      return probe_loss(t, dense(t, t.param(p, "w"), t.param(p, "b"), in[0]), 11);
    }, layer_tol);
  }
  {
    ParameterStore p;
    run("gaussian_activation", p, {random_tensor({4, 6}, rng)}, [](Tape& t, ParameterStore&, const std::vector<Var>& in) {
      return probe_loss(t, gaussian_activation(t, in[0], 0.5), 12);
    }, layer_tol);
  }
  {
    ParameterStore p;
    run("gaussian_radial", p, {random_tensor({4, 6}, rng, -0.4, 0.4)}, [](Tape& t, ParameterStore&, const std::vector<Var>& in) {
      return probe_loss(t, gaussian_radial(t, in[0], 0.5), 13);
    }, layer_tol);
  }
  {
    // keep inputs away from the kinks at 0 and 0.1
    Tensor x = random_tensor({4, 6}, rng, 0.01, 0.09);
    for (std::size_t i = 0; i < x.size(); i += 3) x[i] = -0.5 - x[i];
    for (std::size_t i = 1; i < x.size(); i += 3) x[i] = 0.5 + x[i];
    ParameterStore p;
    run("clipped_relu", p, {x}, [](Tape& t, ParameterStore&, const std::vector<Var>& in) {
      return probe_loss(t, clipped_relu(t, in[0]), 14);
    }, layer_tol);
  }
  {
    ParameterStore p;
    run("sigmoid", p, {random_tensor({4, 6}, rng, -3.0, 3.0)}, [](Tape& t, ParameterStore&, const std::vector<Var>& in) {
      return probe_loss(t, sigmoid(t, in[0]), 15);
    }, layer_tol);
  }
  {
    ParameterStore p;
    const std::vector<int> labels{0, 1, 1, 0, 1};
    run("softmax_xent", p, {random_tensor({5, 2}, rng, -2.0, 2.0)}, [labels](Tape& t, ParameterStore&, const std::vector<Var>& in) {
      return softmax_xent(t, in[0], labels);
    }, layer_tol);
  }
  {
    ParameterStore p;
    const Tensor target = random_tensor({2, 3, 4, 4}, rng);
    run("mse", p, {random_tensor({2, 3, 4, 4}, rng)}, [target](Tape& t, ParameterStore&, const std::vector<Var>& in) {
      return mse(t, in[0], target);
    }, layer_tol);
  }
  {
    ParameterStore p;
    p.add("w", random_tensor({3, 2, 3, 3}, rng));
    p.add("b", random_tensor({3}, rng));
    run("conv2d", p, {random_tensor({2, 2, 5, 5}, rng)}, [](Tape& t, ParameterStore& p, const std::vector<Var>& in) {
      return probe_loss(t, conv2d(t, in[0], t.param(p, "w"), t.param(p, "b"), 1, 1), 16);
    }, layer_tol);
  }
  {
    ParameterStore p;
    p.add("w", random_tensor({3, 2, 2, 2}, rng));
    p.add("b", random_tensor({2}, rng));
    run("transposed_conv2d", p, {random_tensor({2, 3, 3, 3}, rng)}, [](Tape& t, ParameterStore& p, const std::vector<Var>& in) {
      return probe_loss(t, transposed_conv2d(t, in[0], t.param(p, "w"), t.param(p, "b"), 2, 0), 17);
    }, layer_tol);
  }
  {
    // distinct values so the argmax is stable under the probe step
    Tensor x({2, 2, 4, 4});
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * static_cast<double>(i);
    std::shuffle(v.begin(), v.end(), rng);
    x.data.assign(v.begin(), v.end());
    ParameterStore p;
    run("maxpool2", p, {x}, [](Tape& t, ParameterStore&, const std::vector<Var>& in) {
      return probe_loss(t, maxpool2(t, in[0]), 18);
    }, layer_tol);
  }
  {
    ParameterStore p;
    run("concat", p, {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 1, 3, 3}, rng)},
        [](Tape& t, ParameterStore&, const std::vector<Var>& in) { return probe_loss(t, concat(t, in[0], in[1]), 19); },
        layer_tol);
  }
  {
    ParameterStore p;
    const Tensor factor = random_tensor({3}, rng, 0.5, 2.0);
    run("scale_axis1", p, {random_tensor({2, 3, 2, 2}, rng)}, [factor](Tape& t, ParameterStore&, const std::vector<Var>& in) {
      return probe_loss(t, scale_axis1(t, in[0], factor), 21);
    }, layer_tol);
  }
  {
    ParameterStore p;
    p.add("scale", random_tensor({3}, rng, 0.5, 1.5));
    p.add("shift", random_tensor({3}, rng));
    Tensor rm({3}, 0.0), rv({3}, 1.0);
    run("batchnorm", p, {random_tensor({2, 3, 3, 3}, rng)}, [rm, rv](Tape& t, ParameterStore& p, const std::vector<Var>& in) mutable {
      return probe_loss(t, batchnorm(t, in[0], t.param(p, "scale"), t.param(p, "shift"), rm, rv, Mode::train), 20);
    }, layer_tol);
  }
  {
    FnnConfig c;
    c.patterns = 2;
    c.width = 8;
    c.blocks = 2;
    c.gaussian_blocks = 1;
    FnnModel m(c, seed + 1);
    // lift the clipped-ReLU block off its flat region
    for (auto& v : m.params().at("block1.b1").value.data) v = 0.05;
    for (auto& v : m.params().at("block1.b2").value.data) v = 0.05;
    for (auto& v : m.params().at("block1.w1").value.data) v *= 0.05;
    for (auto& v : m.params().at("block1.w2").value.data) v *= 0.05;
    const std::vector<int> labels{0, 1, 0, 1, 1};
    run("fnn_model", m.params(), {random_tensor({5, 8}, rng)}, [&m, labels](Tape& t, ParameterStore&, const std::vector<Var>& in) {
      return softmax_xent(t, m.forward(t, in[0]), labels);
    }, model_tol);
  }
  {
    CnnConfig c;
    c.patterns = 1;
    c.channels = {4};
    CnnModel m(c, seed + 2);
    Tensor target({2, 1, 8, 8}, 0.0);
    for (std::size_t i = 0; i < target.size(); i += 3) target[i] = 1.0;
    run("cnn_model", m.params(), {random_tensor({2, 3, 8, 8}, rng)}, [&m, target](Tape& t, ParameterStore&, const std::vector<Var>& in) {
      return mse(t, m.forward(t, in[0], Mode::train), target);
    }, model_tol);
  }
  return out;
}

}  // namespace ddsm::nn
