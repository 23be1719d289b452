#pragma once

#include <functional>
#include <map>
#include <string>

#include "mcmdpo/autodiff.hpp"
#include "mcmdpo/tensor.hpp"

namespace mcmdpo {

using ParamMap = std::map<std::string, Tensor>;

// A scalar loss exposed both as a value and as analytic gradients, so the
// checker can compare the two routes.
struct ScalarLoss {
  std::function<double(const ParamMap&)> value;
  std::function<GradientMap(const ParamMap&)> gradient;
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool pass = false;
  double h = 0.0;
  double tol = 0.0;
  std::string summary() const;
};

// Central differences (f(p+h) - f(p-h)) / 2h element-wise against the
// analytic gradient. Relative error denominator is
// max(|analytic|, |numeric|, 1e-8). Throws if h is outside (0, 1e-2] or if
// the loss evaluates to different values on two identical calls.
FiniteDiffReport finite_diff_check(const ScalarLoss& loss, const ParamMap& params,
                                   double h = 1e-5, double tol = 1e-4);

}  // namespace mcmdpo
