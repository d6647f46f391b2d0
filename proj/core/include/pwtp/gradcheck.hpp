#pragma once

#include <functional>
#include <string>

#include "pwtp/param_set.hpp"

namespace pwtp {

/// Scalar objective over a ParamSet. When `grad` is non-null the objective
/// also writes its analytic gradient there (same names and shapes as params).
using Objective = std::function<double(const ParamSet& params, ParamSet* grad)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t evaluated = 0;
};

/// Compares the analytic gradient against central differences for every scalar
/// parameter. Error per entry is |analytic - fd| / max(1, |fd|).
GradCheckReport grad_check_report(const Objective& f, const ParamSet& params, double h);

/// Max relative error from grad_check_report.
double grad_check(const Objective& f, const ParamSet& params, double h);

}  // namespace pwtp
