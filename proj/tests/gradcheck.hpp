#pragma once

// Central finite-difference oracle shared by the unit and acceptance suites.
// Runs in double mode: analytic gradients from one backward pass are compared
// against (L(x+h) - L(x-h)) / 2h for a sample of coordinates.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "stereopose/graph.hpp"
#include "stereopose/rng.hpp"

namespace stereopose::testing {

// scalar loss for op-level checks: fixed random projection of a tensor
class WeightedSumNode : public NodeT<double> {
 public:
  WeightedSumNode(NodeT<double>* x, std::uint64_t seed)
      : NodeT<double>(std::vector<int>{1}), weights(x->out.numel()) {
    in = {x};
    RandomStream rng(seed);
    for (double& w : weights) w = rng.uniform(-1.0, 1.0);
  }
  const char* kind() const override { return "weighted_sum"; }
  void forward(GraphT<double>&) override {
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) acc += weights[i] * in[0]->out.v[i];
    out.v[0] = acc;
  }
  void backward(GraphT<double>& g) override {
    if (!g.grad_wanted(in[0])) return;
    for (size_t i = 0; i < weights.size(); ++i) in[0]->out.g[i] += out.g[0] * weights[i];
  }
  std::vector<double> weights;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  int checked = 0;
};

inline double rel_err(double a, double b) {
  double denom = std::max({std::abs(a), std::abs(b), 1e-4});
  return std::abs(a - b) / denom;
}

// Checks `coords_per_leaf` random coordinates of every leaf tensor against
// central differences of `eval` (which must rerun the forward pass and return
// the loss). `grads` must already hold the analytic gradients.
inline GradCheckReport fd_check(const std::function<double()>& eval,
                                const std::vector<std::vector<double>*>& leaf_values,
                                const std::vector<const std::vector<double>*>& leaf_grads,
                                int coords_per_leaf, std::uint64_t seed, double h = 1e-5) {
  GradCheckReport rep;
  RandomStream rng(seed);
  for (size_t k = 0; k < leaf_values.size(); ++k) {
    std::vector<double>& vals = *leaf_values[k];
    const std::vector<double>& grads = *leaf_grads[k];
    int count = std::min<int>(coords_per_leaf, static_cast<int>(vals.size()));
    for (int c = 0; c < count; ++c) {
      size_t i = static_cast<size_t>(rng.uniform_index(vals.size()));
      double orig = vals[i];
      vals[i] = orig + h;
      double lp = eval();
      vals[i] = orig - h;
      double lm = eval();
      vals[i] = orig;
      double fd = (lp - lm) / (2.0 * h);
      rep.max_rel_err = std::max(rep.max_rel_err, rel_err(fd, grads[i]));
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace stereopose::testing
