#pragma once

#include <functional>
#include <string>
#include <vector>

#include "shadowpeft/tensor.hpp"

namespace shadowpeft {

/// Moore-Penrose pseudo-inverse of a 2-D tensor via SVD. Singular values
/// below rcond * sigma_max are truncated. Returns an [n, m] tensor for an
/// [m, n] input; no gradient is recorded (init-time utility).
Tensor pinv(const Tensor& m, double rcond = 1e-12);

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

/// Compares tape gradients of a scalar-valued function against central
/// finite differences (f(x+h) - f(x-h)) / 2h, elementwise over every listed
/// parameter. Relative error uses denominator max(|analytic|, |numeric|,
/// 1e-8). Gradient magnitudes in a full network span several orders, and no
/// single step size suits both tiny-gradient elements (roundoff-limited) and
/// high-curvature ones (truncation-limited), so each element may be checked
/// at several step sizes and scored by its best agreement.
GradCheckResult grad_check(const std::function<Tensor(Tape&)>& f, std::vector<NamedParam> params,
                           std::vector<double> steps = {1e-5, 1e-3});
GradCheckResult grad_check(const std::function<Tensor(Tape&)>& f, std::vector<NamedParam> params,
                           double h);

}  // namespace shadowpeft
