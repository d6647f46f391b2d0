#include "pwtp/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace pwtp {

namespace {

double evaluate(const Objective& f, const ParamSet& params, ParamSet* grad) {
  const double v = f(params, grad);
  if (!std::isfinite(v)) throw Error("objective not finite");
  return v;
}

}  // namespace

GradCheckReport grad_check_report(const Objective& f, const ParamSet& params, double h) {
  if (!(h > 0.0)) throw Error("grad_check: step must be positive");
  ParamSet analytic = params.zeros_like();
  evaluate(f, params, &analytic);

  GradCheckReport report;
  ParamSet probe = params;
  for (auto& [name, tensor] : probe) {
    const Tensor& g = analytic.get(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + h;
      const double up = evaluate(f, probe, nullptr);
      tensor[i] = orig - h;
      const double down = evaluate(f, probe, nullptr);
      tensor[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double err = std::abs(g[i] - fd) / std::max(1.0, std::abs(fd));
      ++report.evaluated;
      if (err > report.max_rel_error || report.worst_param.empty()) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        report.worst_param = name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

double grad_check(const Objective& f, const ParamSet& params, double h) {
  return grad_check_report(f, params, h).max_rel_error;
}

}  // namespace pwtp
