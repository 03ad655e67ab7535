#pragma once

#include <deque>
#include <functional>
#include <string>

#include "ddsm/nn/params.hpp"
#include "ddsm/nn/tensor.hpp"

namespace ddsm::nn {

struct Var {
  std::size_t id = 0;
};

// Reverse-mode tape for one forward pass. Every op appends a node holding its
// value and a closure that pushes the node's gradient into its inputs;
// backward() runs the closures in exact reverse order. Parameter nodes copy
// their value from a ParameterStore and add their gradient back into it.
class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void()> backward;
    ParameterStore* store = nullptr;
    std::size_t param = 0;
  };

  Var input(Tensor value, bool needs_grad = false) {
    value.check_finite("input");
    nodes_.push_back({std::move(value), {}, needs_grad, {}, nullptr, 0});
    return {nodes_.size() - 1};
  }

  Var param(ParameterStore& store, std::size_t i) {
    nodes_.push_back({store[i].value, {}, store[i].trainable, {}, &store, i});
    return {nodes_.size() - 1};
  }
  Var param(ParameterStore& store, const std::string& name) { return param(store, store.index(name)); }

  // Appends an op result. `backward` may assume grad(out) is allocated.
  Var push(Tensor value, bool needs_grad, std::function<void()> backward, const char* op) {
    value.check_finite(op);
    nodes_.push_back({std::move(value), {}, needs_grad, needs_grad ? std::move(backward) : nullptr, nullptr, 0});
    return {nodes_.size() - 1};
  }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  Tensor& mutable_value(Var v) { return nodes_[v.id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // Gradient buffer of a node, zero-initialized on first access.
  Tensor& grad(Var v) {
    auto& n = nodes_[v.id];
    if (n.grad.shape != n.value.shape) n.grad = Tensor(n.value.shape, 0.0);
    return n.grad;
  }

  void backward(Var loss) {
    if (value(loss).size() != 1) throw ConfigError("backward needs a scalar loss");
    grad(loss).data[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad || n.grad.shape != n.value.shape) continue;
      if (n.backward) n.backward();
      if (n.store) {
        auto& target = (*n.store)[n.param].grad;
        for (std::size_t k = 0; k < target.size(); ++k) target[k] += n.grad[k];
      }
    }
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
};

}  // namespace ddsm::nn
