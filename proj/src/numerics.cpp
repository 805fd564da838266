// SPDX-License-Identifier: Apache-2.0
#include "mgmrn/numerics.hpp"

#include <cmath>

namespace mgmrn {

VectorD finite_diff_grad(const ScalarFn& f, VectorD x, double step) {
  check(step > 0.0, "finite_diff_grad: step must be positive");
  VectorD grad(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + step;
    const double fp = f(x);
    x[i] = x0 - step;
    const double fm = f(x);
    x[i] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_diff_grad: non-finite function evaluation at coordinate " +
                               std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

GradCheckReport grad_check(const ParamList<double>& params,
                           const std::function<double()>& forward_scalar,
                           const std::function<void()>& compute_grads, double step) {
  compute_grads();
  std::vector<MatrixD> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(*p.grad);

  GradCheckReport report;
  report.step = step;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& p = params[pi];
    GradCheckEntry entry{p.name, 0.0};
    double* values = p.value->data();
    for (Index i = 0; i < p.value->size(); ++i) {
      const double x0 = values[i];
      values[i] = x0 + step;
      const double fp = forward_scalar();
      values[i] = x0 - step;
      const double fm = forward_scalar();
      values[i] = x0;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("grad_check: non-finite readout while perturbing " + p.name);
      const double fd = (fp - fm) / (2.0 * step);
      entry.max_rel_err = std::max(entry.max_rel_err, relative_error(analytic[pi].data()[i], fd));
    }
    report.per_param.push_back(entry);
  }
  return report;
}

}  // namespace mgmrn
