#pragma once

// Central finite-difference gradient oracle, 64-bit only. Lives in test code
// and stays independent of the backward implementations it checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "pretram/tensor.hpp"

namespace gradcheck {

inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

struct Result {
  double max_rel_err = 0.0;
  size_t checked = 0;
};

// Rebuilds the scalar graph via `build` for every probe so the tape never
// sees the perturbed values. Checks all entries of each leaf, or an evenly
// strided subset when max_entries_per_leaf > 0.
template <class BuildFn>
Result check(const std::vector<pretram::Tensor<double>*>& leaves, BuildFn&& build, double h = 1e-5,
             size_t max_entries_per_leaf = 0) {
  for (auto* l : leaves) {
    l->ensure_grad();
    l->zero_grad();
  }
  pretram::Tensor<double> loss = build();
  pretram::backward(loss);

  Result res;
  for (auto* l : leaves) {
    const size_t n = l->numel();
    size_t step = 1;
    if (max_entries_per_leaf > 0 && n > max_entries_per_leaf) step = (n + max_entries_per_leaf - 1) / max_entries_per_leaf;
    for (size_t i = 0; i < n; i += step) {
      const double orig = (*l->data)[i];
      (*l->data)[i] = orig + h;
      const double fp = build().value();
      (*l->data)[i] = orig - h;
      const double fm = build().value();
      (*l->data)[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = (*l->grad)[i];
      res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic, numeric));
      ++res.checked;
    }
  }
  return res;
}

}  // namespace gradcheck
