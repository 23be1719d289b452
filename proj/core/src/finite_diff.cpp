#include "mcmdpo/finite_diff.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mcmdpo {

std::string FiniteDiffReport::summary() const {
  std::ostringstream os;
  os << (pass ? "pass" : "FAIL") << " max_rel_error=" << max_rel_error;
  if (!worst_param.empty()) {
    os << " at " << worst_param << "[" << worst_index << "]"
       << " analytic=" << worst_analytic << " numeric=" << worst_numeric;
  }
  os << " (h=" << h << ", tol=" << tol << ")";
  return os.str();
}

FiniteDiffReport finite_diff_check(const ScalarLoss& loss, const ParamMap& params,
                                   double h, double tol) {
  if (!(h > 0.0 && h <= 1e-2)) {
    throw std::invalid_argument("finite_diff_check: h must lie in (0, 1e-2]");
  }
  if (!(tol > 0.0)) throw std::invalid_argument("finite_diff_check: tol must be > 0");
  if (!loss.value || !loss.gradient) {
    throw std::invalid_argument("finite_diff_check: loss callbacks missing");
  }

  const double v1 = loss.value(params);
  const double v2 = loss.value(params);
  if (v1 != v2) {
    throw std::runtime_error("finite_diff_check: loss is not deterministic (" +
                             std::to_string(v1) + " vs " + std::to_string(v2) + ")");
  }

  const GradientMap analytic = loss.gradient(params);

  FiniteDiffReport report;
  report.h = h;
  report.tol = tol;

  ParamMap work = params;
  for (const auto& [name, tensor] : params) {
    const Tensor grad = analytic.get_or_zero(name, tensor.shape());
    Tensor& slot = work.at(name);
    for (int64_t i = 0; i < tensor.numel(); ++i) {
      const double keep = slot[i];
      slot[i] = keep + h;
      const double up = loss.value(work);
      slot[i] = keep - h;
      const double down = loss.value(work);
      slot[i] = keep;

      const double numeric = (up - down) / (2.0 * h);
      const double a = grad[i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }

  report.pass = report.max_rel_error <= tol;
  return report;
}

}  // namespace mcmdpo
