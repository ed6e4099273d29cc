#pragma once

// Bias-corrected Adam over a fixed list of parameter tensors.

#include <cmath>
#include <cstdint>
#include <vector>

#include "tage/tensor.hpp"

namespace tage::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t step_count() const { return t_; }

  /// One update over aligned parameter/gradient lists. Lazily initializes
  /// moment tensors to the parameter shapes on first use.
  void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (params.size() != grads.size())
      throw shape_error("Adam::step: parameter/gradient count mismatch");
    if (m_.empty()) {
      for (Tensor* p : params) {
        m_.emplace_back(p->rows(), p->cols());
        v_.emplace_back(p->rows(), p->cols());
      }
    }
    if (m_.size() != params.size()) throw shape_error("Adam::step: parameter count changed");
    ++t_;
    double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& theta = *params[p];
      const Tensor& g = *grads[p];
      if (!theta.same_shape(g))
        throw shape_error("Adam::step: gradient shape " + g.shape_str() +
                          " does not match parameter " + theta.shape_str());
      Tensor& m = m_[p];
      Tensor& v = v_[p];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        double mhat = m[i] / c1;
        double vhat = v[i] / c2;
        theta[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace tage::ad
