// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mgmrn/common.hpp"

namespace mgmrn {

using ScalarFn = std::function<double(const VectorD&)>;

/// Central-difference gradient estimate: (f(x + h e_i) - f(x - h e_i)) / 2h
/// per coordinate, in double precision. Throws if f evaluates non-finite.
VectorD finite_diff_grad(const ScalarFn& f, VectorD x, double step = 1e-6);

/// Relative error convention used by every gradient check.
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_param;
  double step = 0.0;
  std::string precision = "double";

  double max_rel_err() const {
    double m = 0.0;
    for (const auto& e : per_param) m = std::max(m, e.max_rel_err);
    return m;
  }
};

/// Compares implementation gradients against the central-difference oracle.
/// `compute_grads` must zero the gradient accumulators, run the forward pass
/// and backpropagate the same scalar readout that `forward_scalar` evaluates;
/// afterwards each ParamRef's grad holds the implementation gradient.
/// Parameters are perturbed in place and restored; nothing is mutated on exit.
GradCheckReport grad_check(const ParamList<double>& params,
                           const std::function<double()>& forward_scalar,
                           const std::function<void()>& compute_grads,
                           double step = 1e-6);

}  // namespace mgmrn
