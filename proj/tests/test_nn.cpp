#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "ddsm/nn/checks.hpp"

using namespace ddsm;
using namespace ddsm::nn;

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Value of a single-op forward pass on a fresh tape.
template <class F>
Tensor eval(F f, const Tensor& x) {
  Tape t;
  return t.value(f(t, t.input(x)));
}

}  // namespace

TEST(Dense, IdentityAndZeroWeights) {
  std::mt19937_64 rng(1);
  const Tensor z = random_tensor({3, 4}, rng);
  ParameterStore p;
  Tensor eye({4, 4}, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  p.add("eye", eye);
  p.add("zero", Tensor({4, 4}, 0.0));
  p.add("b0", Tensor({4}, 0.0));
  p.add("b", Tensor({4}, std::vector<double>{1, 2, 3, 4}));
  Tape t;
  const Var x = t.input(z);
  EXPECT_EQ(t.value(dense(t, t.param(p, "eye"), t.param(p, "b0"), x)).data, z.data);
  const Tensor& y = t.value(dense(t, t.param(p, "zero"), t.param(p, "b"), x));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(y[r * 4 + c], c + 1.0);
}

TEST(Dense, GradientOnRandom8x8) {
  std::mt19937_64 rng(2);
  ParameterStore p;
  p.add("w", random_tensor({8, 8}, rng));
  p.add("b", random_tensor({8}, rng));
  const auto r = grad_check(p, {random_tensor({8, 8}, rng)}, [](Tape& t, ParameterStore& p, const std::vector<Var>& in) {
    return probe_loss(t, dense(t, t.param(p, "w"), t.param(p, "b"), in[0]), 3);
  });
  EXPECT_LE(r.max_rel_error, 1e-6) << r.worst;
}

TEST(Gaussian, Values) {
  const Tensor x({1, 3}, std::vector<double>{0.0, 1.0, 2.0});
  const auto y = eval([](Tape& t, Var v) { return gaussian_activation(t, v, 0.5); }, x);
  EXPECT_EQ(y[0], 1.0);
  EXPECT_GT(y[1], y[2]);
  EXPECT_NEAR(y[1], std::exp(-2.0), 1e-15);
  const auto far = eval([](Tape& t, Var v) { return gaussian_activation(t, v, 0.5); }, Tensor({1, 2}, std::vector<double>{-50.0, 50.0}));
  EXPECT_EQ(far[0], 0.0);
  EXPECT_EQ(far[1], 0.0);
}

TEST(ClippedRelu, ValuesAndKinkConvention) {
  const Tensor x({1, 5}, std::vector<double>{5.0, -1.0, 0.05, 0.0, 0.1});
  Tape t;
  const Var v = t.input(x, true);
  const Var y = clipped_relu(t, v);
  EXPECT_EQ(t.value(y)[0], 0.1);
  EXPECT_EQ(t.value(y)[1], 0.0);
  EXPECT_EQ(t.value(y)[2], 0.05);
  Tape t2;
  const Var v2 = t2.input(x, true);
  const Var loss = mse(t2, clipped_relu(t2, v2), Tensor({1, 5}, 0.0));
  t2.backward(loss);
  EXPECT_EQ(t2.grad(v2)[3], 0.0);
  EXPECT_EQ(t2.grad(v2)[4], 0.0);
  EXPECT_NE(t2.grad(v2)[2], 0.0);
}

TEST(Sigmoid, ValuesAndSymmetry) {
  const Tensor x({1, 4}, std::vector<double>{0.0, 1.5, -1.5, 3.0});
  const auto y = eval([](Tape& t, Var v) { return sigmoid(t, v); }, x);
  EXPECT_EQ(y[0], 0.5);
  EXPECT_NEAR(y[2], 1.0 - y[1], 1e-15);
}

TEST(Softmax, ExamplesAndNormalization) {
  Tape t;
  const Var z = t.input(Tensor({1, 2}, 0.0));
  EXPECT_NEAR(t.value(softmax_xent(t, z, {0}))[0], std::log(2.0), 1e-15);
  const Var big = t.input(Tensor({1, 2}, std::vector<double>{20.0, -20.0}));
  EXPECT_LT(t.value(softmax_xent(t, big, {0}))[0], 1e-15);
  std::mt19937_64 rng(3);
  const Tensor p = softmax(random_tensor({50, 2}, rng, -30.0, 30.0));
  for (std::size_t r = 0; r < 50; ++r) EXPECT_NEAR(p[2 * r] + p[2 * r + 1], 1.0, 1e-15);
}

TEST(Conv, HorizontalDerivativeStencil) {
  const std::size_t n = 9;
  const double h = 2.0 / (n - 1);
  Tensor img({1, 1, n, n});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) img[r * n + c] = -1.0 + h * static_cast<double>(c);
  ParameterStore p;
  p.add("w", Tensor({1, 1, 2, 2}, std::vector<double>{0.0, 1.0 / h, -1.0 / h, 0.0}));
  p.add("b", Tensor({1}, 0.0));
  Tape t;
  const Tensor& y = t.value(conv2d(t, t.input(img), t.param(p, "w"), t.param(p, "b"), 1, 0));
  ASSERT_EQ(y.shape, (std::vector<std::size_t>{1, 1, n - 1, n - 1}));
  for (double v : y.data) EXPECT_NEAR(v, 1.0, 1e-13);
}

TEST(Conv, IdentityKernel) {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({2, 1, 5, 5}, rng);
  ParameterStore p;
  p.add("w", Tensor({1, 1, 1, 1}, 1.0));
  p.add("b", Tensor({1}, 0.0));
  Tape t;
  EXPECT_EQ(t.value(conv2d(t, t.input(x), t.param(p, "w"), t.param(p, "b"), 1, 0)).data, x.data);
}

TEST(Conv, TransposedIsAdjointOfStridedConv) {
  std::mt19937_64 rng(5);
  ParameterStore p;
  p.add("w", random_tensor({3, 2, 2, 2}, rng));
  p.add("b2", Tensor({2}, 0.0));
  p.add("b3", Tensor({3}, 0.0));
  const Tensor x = random_tensor({2, 2, 6, 6}, rng), y = random_tensor({2, 3, 3, 3}, rng);
  Tape t;
  const Tensor& cx = t.value(conv2d(t, t.input(x), t.param(p, "w"), t.param(p, "b3"), 2, 0));
  const Tensor& ty = t.value(transposed_conv2d(t, t.input(y), t.param(p, "w"), t.param(p, "b2"), 2, 0));
  ASSERT_EQ(cx.shape, y.shape);
  ASSERT_EQ(ty.shape, x.shape);
  const double a = dot(cx, y), b = dot(x, ty);
  EXPECT_NEAR(a, b, 1e-10 * std::abs(a));
}

TEST(Conv, TransposedDoublesSpatialDims) {
  std::mt19937_64 rng(6);
  ParameterStore p;
  p.add("w", random_tensor({4, 2, 2, 2}, rng));
  p.add("b", Tensor({2}, 0.0));
  Tape t;
  const Tensor& y = t.value(transposed_conv2d(t, t.input(random_tensor({1, 4, 5, 7}, rng)), t.param(p, "w"), t.param(p, "b"), 2, 0));
  EXPECT_EQ(y.shape, (std::vector<std::size_t>{1, 2, 10, 14}));
}

TEST(MaxPool, ConstantHotPixelAndRouting) {
  const auto c = eval([](Tape& t, Var v) { return maxpool2(t, v); }, Tensor({1, 1, 4, 4}, 2.5));
  EXPECT_EQ(c.shape, (std::vector<std::size_t>{1, 1, 2, 2}));
  for (double v : c.data) EXPECT_EQ(v, 2.5);
  Tensor hot({1, 1, 4, 4}, 0.0);
  hot[1 * 4 + 2] = 7.0;
  const auto h = eval([](Tape& t, Var v) { return maxpool2(t, v); }, hot);
  EXPECT_EQ(h[1], 7.0);
  Tape t;
  const Var x = t.input(hot, true);
  const Var loss = mse(t, maxpool2(t, x), Tensor({1, 1, 2, 2}, 0.0));
  t.backward(loss);
  EXPECT_NE(t.grad(x)[1 * 4 + 2], 0.0);
  EXPECT_EQ(t.grad(x)[1 * 4 + 3], 0.0);
  EXPECT_EQ(t.grad(x)[0], 0.0);
}

TEST(Concat, SliceRecoversInputsAndGradientsSplit) {
  std::mt19937_64 rng(7);
  const Tensor a = random_tensor({2, 2, 3, 3}, rng), b = random_tensor({2, 3, 3, 3}, rng);
  Tape t;
  const Var va = t.input(a, true), vb = t.input(b, true);
  const Var c = concat(t, va, vb);
  EXPECT_EQ(t.value(c).dim(1), 5u);
  EXPECT_EQ(t.value(slice_channels(t, c, 0, 2)).data, a.data);
  EXPECT_EQ(t.value(slice_channels(t, c, 2, 3)).data, b.data);
  const Tensor target = random_tensor({2, 5, 3, 3}, rng);
  t.backward(mse(t, c, target));
  const Tensor& ga = t.grad(va);
  const double n = static_cast<double>(target.size());
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < 18; ++i) {
      const std::size_t ci = s * 45 + i;
      EXPECT_NEAR(ga[s * 18 + i], 2.0 * (a[s * 18 + i] - target[ci]) / n, 1e-15);
    }
}

TEST(BatchNorm, NormalizedBatchPassesThrough) {
  Tensor x({2, 1, 1, 2}, std::vector<double>{1.0, -1.0, 1.0, -1.0});
  ParameterStore p;
  p.add("s", Tensor({1}, 1.0));
  p.add("h", Tensor({1}, 0.0));
  Tensor rm({1}, 0.0), rv({1}, 1.0);
  Tape t;
  const Tensor& y = t.value(batchnorm(t, t.input(x), t.param(p, "s"), t.param(p, "h"), rm, rv, Mode::train));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], x[i], 1e-5);
}

TEST(BatchNorm, EvalIsAffineInRunningStats) {
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({2, 2, 3, 3}, rng);
  ParameterStore p;
  p.add("s", Tensor({2}, std::vector<double>{1.5, 0.5}));
  p.add("h", Tensor({2}, std::vector<double>{0.1, -0.2}));
  Tensor rm({2}, std::vector<double>{0.3, -0.1}), rv({2}, std::vector<double>{2.0, 0.5});
  Tape t;
  const Tensor& y = t.value(batchnorm(t, t.input(x), t.param(p, "s"), t.param(p, "h"), rm, rv, Mode::eval));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 9; ++i) {
        const std::size_t k = (n * 2 + c) * 9 + i;
        const double want = p.at("s").value[c] * (x[k] - rm[c]) / std::sqrt(rv[c] + 1e-5) + p.at("h").value[c];
        EXPECT_NEAR(y[k], want, 1e-14);
      }
}

TEST(Mse, ExamplesAndGradient) {
  const Tensor target({2, 3}, std::vector<double>{0, 1, 0, 1, 0, 1});
  Tape t;
  EXPECT_EQ(t.value(mse(t, t.input(target), target))[0], 0.0);
  Tensor shifted = target;
  for (auto& v : shifted.data) v += 1.0;
  EXPECT_EQ(t.value(mse(t, t.input(shifted), target))[0], 1.0);
  Tape t2;
  std::mt19937_64 rng(9);
  const Tensor pred = random_tensor({2, 3}, rng);
  const Var v = t2.input(pred, true);
  t2.backward(mse(t2, v, target));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(t2.grad(v)[i], 2 * (pred[i] - target[i]) / 6.0, 1e-15);
}

TEST(Tensor, NonFiniteValueTripsError) {
  Tensor x({1, 2}, std::vector<double>{0.0, std::numeric_limits<double>::quiet_NaN()});
  Tape t;
  EXPECT_THROW(t.input(x), NumericalError);
}

TEST(Sgd, Examples) {
  ParameterStore p;
  p.add("theta", Tensor({1}, 1.0));
  Sgd opt(0.1);
  opt.step(p);
  EXPECT_EQ(p.at("theta").value[0], 1.0);  // zero gradient
  int steps = 0;
  while (std::abs(p.at("theta").value[0]) >= 1e-6 && steps < 1000) {
    p.zero_grad();
    p.at("theta").grad[0] = p.at("theta").value[0];  // d/dtheta of theta^2 / 2
    opt.step(p);
    if (++steps == 1) EXPECT_DOUBLE_EQ(p.at("theta").value[0], 0.9);
  }
  EXPECT_LE(steps, 300);
  EXPECT_THROW(Sgd(0.0), ConfigError);
  EXPECT_THROW(Sgd(0.1, 1.0), ConfigError);
}

TEST(ParameterStore, SerializeRoundTripAndErrors) {
  std::mt19937_64 rng(10);
  ParameterStore p;
  p.add("a", random_tensor({3, 2}, rng));
  p.add("b", random_tensor({4}, rng), false);
  p.step = 17;
  const std::string bytes = p.serialize();
  const auto q = ParameterStore::deserialize(bytes);
  EXPECT_EQ(q.serialize(), bytes);
  EXPECT_EQ(q.step, 17u);
  EXPECT_FALSE(q.at("b").trainable);
  EXPECT_THROW(p.add("a", Tensor({1})), ConfigError);
  EXPECT_THROW(ParameterStore::deserialize(bytes.substr(0, bytes.size() - 1)), IoError);
  EXPECT_THROW(ParameterStore::deserialize("XXXX" + bytes.substr(4)), IoError);
}

TEST(GradCheck, EveryLayerAndToyModel) {
  for (const auto& c : standard_gradchecks(1)) EXPECT_TRUE(c.pass()) << c.name << " " << c.report.max_rel_error << " at " << c.report.worst;
}

TEST(GradCheck, LayerChecksMeetTighterBound) {
  for (const auto& c : standard_gradchecks(2)) {
    if (c.name == "fnn_model" || c.name == "cnn_model" || c.name == "batchnorm") continue;
    EXPECT_LE(c.report.max_rel_error, 1e-6) << c.name;
  }
}

TEST(Backward, DeterministicGradients) {
  auto grads = [] {
    std::mt19937_64 rng(11);
    ParameterStore p;
    p.add("w", random_tensor({4, 3, 3, 3}, rng));
    p.add("b", random_tensor({4}, rng));
    const Tensor x = random_tensor({2, 3, 6, 6}, rng);
    Tape t;
    t.backward(probe_loss(t, sigmoid(t, conv2d(t, t.input(x), t.param(p, "w"), t.param(p, "b"), 1, 1)), 5));
    return p.at("w").grad.data;
  };
  EXPECT_EQ(grads(), grads());
}
