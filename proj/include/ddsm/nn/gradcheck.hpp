#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ddsm/nn/params.hpp"
#include "ddsm/nn/tape.hpp"

namespace ddsm::nn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "name[index]" of the worst coordinate
  std::size_t checked = 0;
};

// Builds the loss on a fresh tape from the store and the given input leaves.
using LossBuilder = std::function<Var(Tape&, ParameterStore&, const std::vector<Var>&)>;

// Compares reverse-mode gradients with central differences of step `h` for
// every trainable parameter and every input coordinate (at most `max_coords`
// evenly spaced coordinates per tensor when nonzero). The error of a
// coordinate is |a - n| / max(|a|, |n|, floor) with floor = 1e-3 * max |a|
// over the whole check, so that coordinates with negligible gradient do not
// dominate the report through round-off.
inline GradCheckReport grad_check(ParameterStore& params, std::vector<Tensor> inputs, const LossBuilder& build,
                                  double h = 1e-6, std::size_t max_coords = 0) {
  auto evaluate = [&](bool with_backward, std::vector<Tensor>* input_grads) {
    Tape tape;
    std::vector<Var> leaves;
    for (auto& in : inputs) leaves.push_back(tape.input(in, true));
    const Var loss = build(tape, params, leaves);
    const double value = tape.value(loss)[0];
    if (with_backward) {
      tape.backward(loss);
      if (input_grads) {
        input_grads->clear();
        for (std::size_t i = 0; i < leaves.size(); ++i) input_grads->push_back(tape.grad(leaves[i]));
      }
    }
    return value;
  };

  params.zero_grad();
  std::vector<Tensor> input_grads;
  evaluate(true, &input_grads);

  struct Target {
    std::string name;
    Tensor* value;
    const Tensor* grad;
  };
  std::vector<Target> targets;
  for (auto& e : params)
    if (e.trainable) targets.push_back({e.name, &e.value, &e.grad});
  for (std::size_t i = 0; i < inputs.size(); ++i)
    targets.push_back({"input" + std::to_string(i), &inputs[i], &input_grads[i]});

  double floor = 0.0;
  for (const auto& tg : targets)
    for (double g : tg.grad->data) floor = std::max(floor, std::abs(g));
  floor = std::max(1e-3 * floor, 1e-12);

  GradCheckReport rep;
  for (const auto& tg : targets) {
    const std::size_t n = tg.value->size();
    const std::size_t stride = (max_coords && n > max_coords) ? (n + max_coords - 1) / max_coords : 1;
    for (std::size_t k = 0; k < n; k += stride) {
      const double saved = (*tg.value)[k];
      (*tg.value)[k] = saved + h;
      const double up = evaluate(false, nullptr);
      (*tg.value)[k] = saved - h;
      const double down = evaluate(false, nullptr);
      (*tg.value)[k] = saved;
      const double num = (up - down) / (2.0 * h);
      const double ana = (*tg.grad)[k];
      const double err = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), floor});
      ++rep.checked;
      if (err > rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst = tg.name + "[" + std::to_string(k) + "]";
      }
    }
  }
  return rep;
}

}  // namespace ddsm::nn
