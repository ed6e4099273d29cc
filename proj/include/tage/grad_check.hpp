#pragma once

// Finite-difference gradient checking. The scalar function under test is
// re-evaluated from plain tensors on every probe, so the comparison is
// independent of any one tape.

#include <cmath>
#include <functional>
#include <vector>

#include "tage/tensor.hpp"

namespace tage::ad {

/// Central-difference gradient of f at inputs, one probe pair per entry.
inline std::vector<Tensor> finite_difference_grad(
    const std::function<double(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
    double h = 1e-6) {
  std::vector<Tensor> grads;
  grads.reserve(inputs.size());
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    Tensor g(inputs[p].rows(), inputs[p].cols());
    for (std::size_t i = 0; i < inputs[p].size(); ++i) {
      double orig = inputs[p][i];
      inputs[p][i] = orig + h;
      double up = f(inputs);
      inputs[p][i] = orig - h;
      double down = f(inputs);
      inputs[p][i] = orig;
      g[i] = (up - down) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

/// Max relative error between analytic and finite-difference gradients of a
/// scalar-valued subnetwork, max over all input entries. Relative error is
/// |a-b| / max(1, |a|, |b|) so near-zero gradients compare absolutely.
inline double grad_check(const std::function<double(const std::vector<Tensor>&)>& f,
                         const std::vector<Tensor>& inputs,
                         const std::vector<Tensor>& analytic_grads, double h = 1e-6) {
  std::vector<Tensor> numeric = finite_difference_grad(f, inputs, h);
  double worst = 0.0;
  for (std::size_t p = 0; p < numeric.size(); ++p)
    for (std::size_t i = 0; i < numeric[p].size(); ++i) {
      double a = analytic_grads[p][i];
      double b = numeric[p][i];
      double err = std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
      worst = std::max(worst, err);
    }
  return worst;
}

}  // namespace tage::ad
