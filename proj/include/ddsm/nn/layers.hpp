#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "ddsm/nn/tape.hpp"
#include "ddsm/nn/tensor.hpp"

namespace ddsm::nn {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline MapMat mat(double* p, std::size_t r, std::size_t c) {
  return MapMat(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline CMapMat mat(const double* p, std::size_t r, std::size_t c) {
  return CMapMat(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

struct ConvGeom {
  std::size_t c, h, w, k, stride, pad, oh, ow;
};

// Patch matrix [c*k*k, oh*ow] of one image [c,h,w]; out-of-range taps are 0.
inline void im2col(const double* img, const ConvGeom& g, double* col) {
  const std::size_t cols = g.oh * g.ow;
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = col + ((c * g.k + ki) * g.k + kj) * cols;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            const bool in = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) && ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.ow + ox] = in ? img[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : 0.0;
          }
        }
      }
}

// Adjoint of im2col: scatters-adds the patch matrix back into an image.
inline void col2im(const double* col, const ConvGeom& g, double* img) {
  const std::size_t cols = g.oh * g.ow;
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = col + ((c * g.k + ki) * g.k + kj) * cols;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            img[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += row[oy * g.ow + ox];
          }
        }
      }
}

template <class F, class D>
Var elementwise(Tape& t, Var x, F f, D df, const char* name) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  return t.push(std::move(y), t.needs_grad(x), [&t, x, df, out = Var{t.size()}] {
    const Tensor& xv = t.value(x);
    const Tensor& yv = t.value(out);
    const Tensor& gy = t.grad(out);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
  }, name);
}

}  // namespace detail

// z [B,in], W [out,in], b [out] -> z W^T + b.
inline Var dense(Tape& t, Var w, Var b, Var z) {
  const Tensor &wv = t.value(w), &bv = t.value(b), &zv = t.value(z);
  require_rank(wv, 2, "dense weight");
  require_rank(zv, 2, "dense input");
  const std::size_t batch = zv.dim(0), in = zv.dim(1), out = wv.dim(0);
  if (wv.dim(1) != in) throw ConfigError("dense: input width does not match the weight");
  require_shape(bv, {out}, "dense bias");
  Tensor y({batch, out});
  auto Y = detail::mat(y.ptr(), batch, out);
  Y.noalias() = detail::mat(zv.ptr(), batch, in) * detail::mat(wv.ptr(), out, in).transpose();
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t c = 0; c < out; ++c) y[r * out + c] += bv[c];
  const bool ng = t.needs_grad(w) || t.needs_grad(b) || t.needs_grad(z);
  return t.push(std::move(y), ng, [&t, w, b, z, batch, in, out, o = Var{t.size()}] {
    const Tensor& gy = t.grad(o);
    auto GY = detail::mat(gy.ptr(), batch, out);
    if (t.needs_grad(z)) detail::mat(t.grad(z).ptr(), batch, in).noalias() += GY * detail::mat(t.value(w).ptr(), out, in);
    if (t.needs_grad(w)) detail::mat(t.grad(w).ptr(), out, in).noalias() += GY.transpose() * detail::mat(t.value(z).ptr(), batch, in);
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad(b);
      for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t c = 0; c < out; ++c) gb[c] += gy[r * out + c];
    }
  }, "dense");
}

inline Var add(Tape& t, Var a, Var b) {
  const Tensor &av = t.value(a), &bv = t.value(b);
  if (av.shape != bv.shape) throw ConfigError("add: shape mismatch");
  Tensor y(av.shape);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return t.push(std::move(y), t.needs_grad(a) || t.needs_grad(b), [&t, a, b, o = Var{t.size()}] {
    const Tensor& gy = t.grad(o);
    for (Var v : {a, b})
      if (t.needs_grad(v)) {
        Tensor& g = t.grad(v);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
      }
  }, "add");
}

// exp(-z^2 / (2 a^2)) per coordinate.
inline Var gaussian_activation(Tape& t, Var z, double a) {
  if (!(a > 0.0)) throw ConfigError("gaussian bandwidth must be positive");
  const double s = 1.0 / (2.0 * a * a);
  return detail::elementwise(
      t, z, [s](double x) { return std::exp(-s * x * x); }, [s](double x, double y) { return -2.0 * s * x * y; },
      "gaussian_activation");
}

// Radial reading: every coordinate of row r becomes exp(-|z_r|^2 / (2 a^2)).
inline Var gaussian_radial(Tape& t, Var z, double a) {
  if (!(a > 0.0)) throw ConfigError("gaussian bandwidth must be positive");
  const Tensor& zv = t.value(z);
  require_rank(zv, 2, "gaussian_radial input");
  const std::size_t rows = zv.dim(0), cols = zv.dim(1);
  const double s = 1.0 / (2.0 * a * a);
  Tensor y(zv.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    double q = 0.0;
    for (std::size_t c = 0; c < cols; ++c) q += zv[r * cols + c] * zv[r * cols + c];
    const double v = std::exp(-s * q);
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = v;
  }
  return t.push(std::move(y), t.needs_grad(z), [&t, z, rows, cols, s, o = Var{t.size()}] {
    const Tensor &zv = t.value(z), &yv = t.value(o), &gy = t.grad(o);
    Tensor& gz = t.grad(z);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) acc += gy[r * cols + c];
      const double f = -2.0 * s * yv[r * cols] * acc;
      for (std::size_t c = 0; c < cols; ++c) gz[r * cols + c] += f * zv[r * cols + c];
    }
  }, "gaussian_radial");
}

// min(max(0,z), 0.1). The derivative is 1 on the open interval (0, 0.1) and 0
// elsewhere, including both kinks.
inline Var clipped_relu(Tape& t, Var z) {
  return detail::elementwise(
      t, z, [](double x) { return std::min(std::max(0.0, x), 0.1); },
      [](double x, double) { return (x > 0.0 && x < 0.1) ? 1.0 : 0.0; }, "clipped_relu");
}

inline double sigmoid_value(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Var sigmoid(Tape& t, Var z) {
  return detail::elementwise(t, z, sigmoid_value, [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

// Row-wise softmax probabilities (no tape).
inline Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax input");
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  Tensor p(logits.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, logits[r * k + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(logits[r * k + c] - mx);
    for (std::size_t c = 0; c < k; ++c) p[r * k + c] = std::exp(logits[r * k + c] - mx) / z;
  }
  return p;
}

// Mean over rows of -log softmax(logits)[label], evaluated as
// logsumexp(l) - l[label]. Optional per-class weights.
inline Var softmax_xent(Tape& t, Var logits, const std::vector<int>& labels, std::vector<double> class_weight = {}) {
  const Tensor& lv = t.value(logits);
  require_rank(lv, 2, "softmax_xent logits");
  const std::size_t rows = lv.dim(0), k = lv.dim(1);
  if (labels.size() != rows) throw ConfigError("softmax_xent: one label per row required");
  if (class_weight.empty()) class_weight.assign(k, 1.0);
  if (class_weight.size() != k) throw ConfigError("softmax_xent: one weight per class required");
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) throw ConfigError("softmax_xent: label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, lv[r * k + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(lv[r * k + c] - mx);
    loss += class_weight[static_cast<std::size_t>(labels[r])] * (mx + std::log(z) - lv[r * k + static_cast<std::size_t>(labels[r])]);
  }
  loss /= static_cast<double>(rows);
  return t.push(Tensor({1}, {loss}), t.needs_grad(logits), [&t, logits, labels, class_weight, rows, k, o = Var{t.size()}] {
    const double g = t.grad(o)[0] / static_cast<double>(rows);
    const Tensor p = softmax(t.value(logits));
    Tensor& gl = t.grad(logits);
    for (std::size_t r = 0; r < rows; ++r) {
      const double w = class_weight[static_cast<std::size_t>(labels[r])];
      for (std::size_t c = 0; c < k; ++c)
        gl[r * k + c] += g * w * (p[r * k + c] - (static_cast<int>(c) == labels[r] ? 1.0 : 0.0));
    }
  }, "softmax_xent");
}

inline Var mse(Tape& t, Var pred, const Tensor& target) {
  const Tensor& pv = t.value(pred);
  if (pv.shape != target.shape) throw ConfigError("mse: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) s += (pv[i] - target[i]) * (pv[i] - target[i]);
  const double n = static_cast<double>(pv.size());
  return t.push(Tensor({1}, {s / n}), t.needs_grad(pred), [&t, pred, target, n, o = Var{t.size()}] {
    const double g = t.grad(o)[0];
    const Tensor& pv = t.value(pred);
    Tensor& gp = t.grad(pred);
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * 2.0 * (pv[i] - target[i]) / n;
  }, "mse");
}

// Cross-correlation: y[b,o,i,j] = bias[o] + sum_{c,p,q} w[o,c,p,q] x[b,c,i*s+p-pad,j*s+q-pad].
inline Var conv2d(Tape& t, Var x, Var w, Var b, std::size_t stride = 1, std::size_t pad = 0) {
  const Tensor &xv = t.value(x), &wv = t.value(w), &bv = t.value(b);
  require_rank(xv, 4, "conv2d input");
  require_rank(wv, 4, "conv2d filter");
  const std::size_t batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const std::size_t cout = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != cin || wv.dim(3) != k) throw ConfigError("conv2d: filter does not match input channels");
  require_shape(bv, {cout}, "conv2d bias");
  if (stride < 1 || h + 2 * pad < k || wd + 2 * pad < k) throw ConfigError("conv2d: invalid geometry");
  const detail::ConvGeom g{cin, h, wd, k, stride, pad, (h + 2 * pad - k) / stride + 1, (wd + 2 * pad - k) / stride + 1};
  const std::size_t rows = cin * k * k, cols = g.oh * g.ow;
  Tensor y({batch, cout, g.oh, g.ow});
  Buffer col(rows * cols);
  for (std::size_t n = 0; n < batch; ++n) {
    detail::im2col(xv.ptr() + n * cin * h * wd, g, col.data());
    auto Y = detail::mat(y.ptr() + n * cout * cols, cout, cols);
    Y.noalias() = detail::mat(wv.ptr(), cout, rows) * detail::mat(col.data(), rows, cols);
    for (std::size_t o = 0; o < cout; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += bv[o];
  }
  const bool ng = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  return t.push(std::move(y), ng, [&t, x, w, b, g, batch, cout, rows, cols, o = Var{t.size()}] {
    const Tensor& gy = t.grad(o);
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    Buffer col(rows * cols);
    const std::size_t img = g.c * g.h * g.w;
    for (std::size_t n = 0; n < batch; ++n) {
      auto GY = detail::mat(gy.ptr() + n * cout * cols, cout, cols);
      if (t.needs_grad(w)) {
        detail::im2col(xv.ptr() + n * img, g, col.data());
        detail::mat(t.grad(w).ptr(), cout, rows).noalias() += GY * detail::mat(col.data(), rows, cols).transpose();
      }
      if (t.needs_grad(b)) {
        Tensor& gb = t.grad(b);
        for (std::size_t c = 0; c < cout; ++c) {
          const double* row = gy.ptr() + (n * cout + c) * cols;
          double s = 0.0;
          for (std::size_t k = 0; k < cols; ++k) s += row[k];
          gb[c] += s;
        }
      }
      if (t.needs_grad(x)) {
        detail::mat(col.data(), rows, cols).noalias() = detail::mat(wv.ptr(), cout, rows).transpose() * GY;
        detail::col2im(col.data(), g, t.grad(x).ptr() + n * img);
      }
    }
  }, "conv2d");
}

// Adjoint of conv2d for the same filter layout w[c_y, c_x, k, k]: maps
// [B, c_y, H, W] to [B, c_x, (H-1)s - 2 pad + k, ...], plus a bias over c_x.
inline Var transposed_conv2d(Tape& t, Var y, Var w, Var b, std::size_t stride = 2, std::size_t pad = 0) {
  const Tensor &yv = t.value(y), &wv = t.value(w), &bv = t.value(b);
  require_rank(yv, 4, "transposed_conv2d input");
  require_rank(wv, 4, "transposed_conv2d filter");
  const std::size_t batch = yv.dim(0), cy = yv.dim(1), h = yv.dim(2), wd = yv.dim(3);
  const std::size_t cx = wv.dim(1), k = wv.dim(2);
  if (wv.dim(0) != cy || wv.dim(3) != k) throw ConfigError("transposed_conv2d: filter does not match input channels");
  require_shape(bv, {cx}, "transposed_conv2d bias");
  if (stride < 1 || (h - 1) * stride + k < 2 * pad + 1) throw ConfigError("transposed_conv2d: invalid geometry");
  const std::size_t oh = (h - 1) * stride + k - 2 * pad, ow = (wd - 1) * stride + k - 2 * pad;
  const detail::ConvGeom g{cx, oh, ow, k, stride, pad, h, wd};
  const std::size_t rows = cx * k * k, cols = h * wd, img = cx * oh * ow;
  Tensor out({batch, cx, oh, ow});
  Buffer col(rows * cols);
  for (std::size_t n = 0; n < batch; ++n) {
    detail::mat(col.data(), rows, cols).noalias() =
        detail::mat(wv.ptr(), cy, rows).transpose() * detail::mat(yv.ptr() + n * cy * cols, cy, cols);
    double* dst = out.ptr() + n * img;
    detail::col2im(col.data(), g, dst);
    for (std::size_t c = 0; c < cx; ++c)
      for (std::size_t i = 0; i < oh * ow; ++i) dst[c * oh * ow + i] += bv[c];
  }
  const bool ng = t.needs_grad(y) || t.needs_grad(w) || t.needs_grad(b);
  return t.push(std::move(out), ng, [&t, y, w, b, g, batch, cy, cx, rows, cols, img, o = Var{t.size()}] {
    const Tensor& go = t.grad(o);
    Buffer col(rows * cols);
    for (std::size_t n = 0; n < batch; ++n) {
      const double* gimg = go.ptr() + n * img;
      if (t.needs_grad(b)) {
        Tensor& gb = t.grad(b);
        const std::size_t plane = g.h * g.w;
        for (std::size_t c = 0; c < cx; ++c)
          for (std::size_t i = 0; i < plane; ++i) gb[c] += gimg[c * plane + i];
      }
      if (!t.needs_grad(y) && !t.needs_grad(w)) continue;
      detail::im2col(gimg, g, col.data());
      auto C = detail::mat(col.data(), rows, cols);
      if (t.needs_grad(y))
        detail::mat(t.grad(y).ptr() + n * cy * cols, cy, cols).noalias() += detail::mat(t.value(w).ptr(), cy, rows) * C;
      if (t.needs_grad(w))
        detail::mat(t.grad(w).ptr(), cy, rows).noalias() +=
            detail::mat(t.value(y).ptr() + n * cy * cols, cy, cols) * C.transpose();
    }
  }, "transposed_conv2d");
}

// 2x2 non-overlapping max pooling; ties go to the first position in scan order.
inline Var maxpool2(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  require_rank(xv, 4, "maxpool2 input");
  const std::size_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h % 2 || w % 2) throw ConfigError("maxpool2: spatial dims must be even");
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor y({xv.dim(0), xv.dim(1), oh, ow});
  std::vector<std::uint32_t> arg(y.size());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = p * h * w + (2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = p * h * w + (2 * i + di) * w + 2 * j + dj;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (p * oh + i) * ow + j;
        y[o] = xv[best];
        arg[o] = static_cast<std::uint32_t>(best);
      }
  return t.push(std::move(y), t.needs_grad(x), [&t, x, arg = std::move(arg), o = Var{t.size()}] {
    const Tensor& gy = t.grad(o);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[arg[i]] += gy[i];
  }, "maxpool2");
}

// Multiplies axis 1 of x by a constant per-index factor: columns of [B,F],
// channels of [B,C,H,W].
inline Var scale_axis1(Tape& t, Var x, const Tensor& factor) {
  const Tensor& xv = t.value(x);
  if (xv.rank() < 2) throw ConfigError("scale_axis1 needs rank >= 2");
  const std::size_t c = xv.dim(1), inner = xv.size() / (xv.dim(0) * c);
  require_shape(factor, {c}, "scale factors");
  Tensor y(xv.shape);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * factor[(i / inner) % c];
  return t.push(std::move(y), t.needs_grad(x), [&t, x, factor, c, inner, o = Var{t.size()}] {
    const Tensor& gy = t.grad(o);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * factor[(i / inner) % c];
  }, "scale_axis1");
}

// Channel concatenation of [B,Ca,H,W] and [B,Cb,H,W].
inline Var concat(Tape& t, Var a, Var b) {
  const Tensor &av = t.value(a), &bv = t.value(b);
  require_rank(av, 4, "concat input");
  require_rank(bv, 4, "concat input");
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
    throw ConfigError("concat: batch or spatial dims differ");
  const std::size_t batch = av.dim(0), sa = av.size() / batch, sb = bv.size() / batch;
  Tensor y({batch, av.dim(1) + bv.dim(1), av.dim(2), av.dim(3)});
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(av.ptr() + n * sa, sa, y.ptr() + n * (sa + sb));
    std::copy_n(bv.ptr() + n * sb, sb, y.ptr() + n * (sa + sb) + sa);
  }
  return t.push(std::move(y), t.needs_grad(a) || t.needs_grad(b), [&t, a, b, batch, sa, sb, o = Var{t.size()}] {
    const Tensor& gy = t.grad(o);
    for (std::size_t n = 0; n < batch; ++n) {
      if (t.needs_grad(a)) {
        double* ga = t.grad(a).ptr() + n * sa;
        for (std::size_t i = 0; i < sa; ++i) ga[i] += gy[n * (sa + sb) + i];
      }
      if (t.needs_grad(b)) {
        double* gb = t.grad(b).ptr() + n * sb;
        for (std::size_t i = 0; i < sb; ++i) gb[i] += gy[n * (sa + sb) + sa + i];
      }
    }
  }, "concat");
}

// Channels [begin, begin+count) of a [B,C,H,W] tensor.
inline Var slice_channels(Tape& t, Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = t.value(x);
  require_rank(xv, 4, "slice_channels input");
  if (begin + count > xv.dim(1)) throw ConfigError("slice_channels: range out of bounds");
  const std::size_t batch = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  Tensor y({batch, count, xv.dim(2), xv.dim(3)});
  for (std::size_t n = 0; n < batch; ++n)
    std::copy_n(xv.ptr() + (n * c + begin) * plane, count * plane, y.ptr() + n * count * plane);
  return t.push(std::move(y), t.needs_grad(x), [&t, x, batch, c, begin, count, plane, o = Var{t.size()}] {
    const Tensor& gy = t.grad(o);
    Tensor& gx = t.grad(x);
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < count * plane; ++i) gx[(n * c + begin) * plane + i] += gy[n * count * plane + i];
  }, "slice_channels");
}

enum class Mode { train, eval };

struct BatchNormState {
  double momentum = 0.9;
  double eps = 1e-5;
};

// Per-channel normalization over batch and spatial dims of [B,C,H,W].
// Train mode normalizes with batch statistics and folds them into the running
// estimates (r <- m r + (1-m) batch, unbiased variance); eval mode uses the
// running estimates.
inline Var batchnorm(Tape& t, Var x, Var scale, Var shift, Tensor& running_mean, Tensor& running_var, Mode mode,
                     BatchNormState st = {}) {
  const Tensor& xv = t.value(x);
  require_rank(xv, 4, "batchnorm input");
  const std::size_t batch = xv.dim(0), ch = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  require_shape(t.value(scale), {ch}, "batchnorm scale");
  require_shape(t.value(shift), {ch}, "batchnorm shift");
  require_shape(running_mean, {ch}, "batchnorm running mean");
  require_shape(running_var, {ch}, "batchnorm running var");
  const double n = static_cast<double>(batch * plane);
  std::vector<double> mean(ch), inv_std(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    if (mode == Mode::train) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < plane; ++i) s += xv[(b * ch + c) * plane + i];
      const double m = s / n;
      double v = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = xv[(b * ch + c) * plane + i] - m;
          v += d * d;
        }
      v /= n;
      mean[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + st.eps);
      running_mean[c] = st.momentum * running_mean[c] + (1.0 - st.momentum) * m;
      running_var[c] = st.momentum * running_var[c] + (1.0 - st.momentum) * (n > 1 ? v * n / (n - 1) : v);
    } else {
      mean[c] = running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(running_var[c] + st.eps);
    }
  }
  const Tensor &gm = t.value(scale), &bt = t.value(shift);
  Tensor y(xv.shape);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t k = (b * ch + c) * plane + i;
        y[k] = gm[c] * (xv[k] - mean[c]) * inv_std[c] + bt[c];
      }
  const bool ng = t.needs_grad(x) || t.needs_grad(scale) || t.needs_grad(shift);
  return t.push(std::move(y), ng, [&t, x, scale, shift, mode, batch, ch, plane, n, mean, inv_std, o = Var{t.size()}] {
    const Tensor &gy = t.grad(o), &xv = t.value(x), &gm = t.value(scale);
    for (std::size_t c = 0; c < ch; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t k = (b * ch + c) * plane + i;
          sum_g += gy[k];
          sum_gx += gy[k] * (xv[k] - mean[c]) * inv_std[c];
        }
      if (t.needs_grad(scale)) t.grad(scale)[c] += sum_gx;
      if (t.needs_grad(shift)) t.grad(shift)[c] += sum_g;
      if (!t.needs_grad(x)) continue;
      Tensor& gx = t.grad(x);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t k = (b * ch + c) * plane + i;
          if (mode == Mode::train) {
            const double xhat = (xv[k] - mean[c]) * inv_std[c];
            gx[k] += gm[c] * inv_std[c] * (gy[k] - sum_g / n - xhat * sum_gx / n);
          } else {
            gx[k] += gm[c] * inv_std[c] * gy[k];
          }
        }
    }
  }, "batchnorm");
}

}  // namespace ddsm::nn
