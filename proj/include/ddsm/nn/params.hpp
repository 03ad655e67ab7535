#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ddsm/error.hpp"
#include "ddsm/io.hpp"
#include "ddsm/nn/tensor.hpp"

namespace ddsm::nn {

// Named tensors in insertion order. Trainable entries are updated by the
// optimizer; the rest are buffers (batch-norm running statistics, input scales).
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
  };

  std::size_t add(const std::string& name, Tensor value, bool trainable = true) {
    for (const auto& e : entries_)
      if (e.name == name) throw ConfigError("duplicate parameter name " + name);
    Tensor g(value.shape, 0.0);
    entries_.push_back({name, std::move(value), std::move(g), trainable});
    return entries_.size() - 1;
  }

  std::size_t index(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return i;
    throw ConfigError("unknown parameter " + name);
  }

  Entry& operator[](std::size_t i) { return entries_[i]; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  Entry& at(const std::string& name) { return entries_[index(name)]; }
  const Entry& at(const std::string& name) const { return entries_[index(name)]; }
  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::uint64_t step = 0;

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(0.0);
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.value.size();
    return n;
  }

  // "EITP" checkpoint: magic, u32 version, u64 step, u32 entry count, then per
  // entry: name, u32 trainable flag, array (rank, dims, little-endian f64).
  std::string serialize() const {
    ByteWriter w;
    w.raw("EITP");
    w.u32(1);
    w.u64(step);
    w.u32(static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      w.str(e.name);
      w.u32(e.trainable ? 1 : 0);
      std::vector<std::uint64_t> dims(e.value.shape.begin(), e.value.shape.end());
      w.array(dims, e.value.ptr());
    }
    return w.bytes();
  }

  static ParameterStore deserialize(std::string_view bytes) {
    ByteReader r(bytes);
    if (r.raw(4) != "EITP") throw IoError("not a checkpoint (bad magic)");
    if (r.u32() != 1) throw IoError("unsupported checkpoint version");
    ParameterStore s;
    s.step = r.u64();
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string name = r.str();
      const bool trainable = r.u32() != 0;
      std::vector<std::uint64_t> dims;
      auto values = r.array(dims);
      s.add(name, Tensor(std::vector<std::size_t>(dims.begin(), dims.end()), std::move(values)), trainable);
    }
    if (!r.done()) throw IoError("trailing bytes after checkpoint");
    return s;
  }

  // Copies values of matching names from another store (shapes must agree).
  void load_values(const ParameterStore& other) {
    if (other.size() != size()) throw ConfigError("checkpoint does not match the model layout");
    for (std::size_t i = 0; i < size(); ++i) {
      if (other[i].name != entries_[i].name || other[i].value.shape != entries_[i].value.shape)
        throw ConfigError("checkpoint entry " + other[i].name + " does not match the model layout");
      entries_[i].value = other[i].value;
    }
    step = other.step;
  }

 private:
  std::vector<Entry> entries_;
};

// Weights ~ U(-sqrt(3/fan_in), sqrt(3/fan_in)) (unit-variance preserving for
// unit-variance inputs).
template <class Rng>
Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double lim = std::sqrt(3.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-lim, lim);
  for (auto& v : t.data) v = u(rng);
  return t;
}

// theta <- theta - alpha * g, or with momentum mu: v <- mu v + g, theta <- theta - alpha v.
class Sgd {
 public:
  explicit Sgd(double alpha, double momentum = 0.0) : alpha_(alpha), momentum_(momentum) {
    if (!(alpha > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
  }

  void step(ParameterStore& p) {
    if (momentum_ > 0.0 && velocity_.size() != p.size()) {
      velocity_.clear();
      for (const auto& e : p) velocity_.emplace_back(e.value.shape, 0.0);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto& e = p[i];
      if (!e.trainable) continue;
      if (e.grad.shape != e.value.shape) throw ConfigError("gradient shape mismatch for " + e.name);
      if (momentum_ > 0.0) {
        auto& v = velocity_[i].data;
        for (std::size_t k = 0; k < v.size(); ++k) {
          v[k] = momentum_ * v[k] + e.grad[k];
          e.value[k] -= alpha_ * v[k];
        }
      } else {
        for (std::size_t k = 0; k < e.value.size(); ++k) e.value[k] -= alpha_ * e.grad[k];
      }
    }
    ++p.step;
  }

  double alpha() const { return alpha_; }
  void set_alpha(double a) { alpha_ = a; }

 private:
  double alpha_;
  double momentum_;
  std::vector<Tensor> velocity_;
};

inline void sgd_step(ParameterStore& p, double alpha) { Sgd(alpha).step(p); }

}  // namespace ddsm::nn
