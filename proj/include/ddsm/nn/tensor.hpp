#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ddsm/error.hpp"

namespace ddsm::nn {

// Aligned storage keeps the vectorized reductions on fixed element offsets, so
// results do not depend on where the allocator places a buffer.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

// Dense row-major array of doubles. Images use [batch, channel, row, column]
// with row = x2 index and column = x1 index.
struct Tensor {
  std::vector<std::size_t> shape;
  Buffer data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)), data(count(shape), fill) {}
  Tensor(std::vector<std::size_t> s, const std::vector<double>& values)
      : shape(std::move(s)), data(values.begin(), values.end()) {
    if (data.size() != count(shape)) throw ConfigError("tensor data does not match its shape");
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  void check_finite(const std::string& where) const {
    for (double v : data)
      if (!std::isfinite(v)) throw NumericalError("non-finite value produced by " + where);
  }
};

inline std::string shape_string(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

inline void require_shape(const Tensor& t, const std::vector<std::size_t>& s, const std::string& what) {
  if (t.shape != s) throw ConfigError(what + ": expected shape " + shape_string(s) + ", got " + shape_string(t.shape));
}

inline void require_rank(const Tensor& t, std::size_t r, const std::string& what) {
  if (t.rank() != r) throw ConfigError(what + ": expected rank " + std::to_string(r) + ", got " + shape_string(t.shape));
}

}  // namespace ddsm::nn
