#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pretram/tensor.hpp"

namespace pretram {

// Named trainable tensor with Adam moment accumulators.
template <class Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  std::vector<Real> m, v;

  Parameter() = default;
  Parameter(std::string n, Tensor<Real> t) : name(std::move(n)), value(std::move(t)) {
    value.ensure_grad();
    m.assign(value.numel(), Real(0));
    v.assign(value.numel(), Real(0));
  }
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam update; step_index starts at 1. Non-finite gradients
// abort with the offending parameter named.
template <class Real>
void adam_step(std::vector<Parameter<Real>*>& params, const AdamConfig& cfg, long step_index) {
  if (step_index < 1) throw NumericalError("adam_step: step_index must be >= 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_index));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_index));
  for (Parameter<Real>* p : params) {
    auto& val = *p->value.data;
    auto& grd = *p->value.grad;
    const size_t n = val.size();
    for (size_t i = 0; i < n; ++i) {
      const double g = static_cast<double>(grd[i]);
      if (!std::isfinite(g))
        throw NumericalError("adam_step: non-finite gradient in '" + p->name + "' at index " + std::to_string(i));
      const double m = cfg.beta1 * static_cast<double>(p->m[i]) + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * static_cast<double>(p->v[i]) + (1.0 - cfg.beta2) * g * g;
      p->m[i] = static_cast<Real>(m);
      p->v[i] = static_cast<Real>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      val[i] = static_cast<Real>(static_cast<double>(val[i]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

template <class Real>
void zero_grads(std::vector<Parameter<Real>*>& params) {
  for (Parameter<Real>* p : params) p->value.zero_grad();
}

}  // namespace pretram
