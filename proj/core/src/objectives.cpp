#include "pwtp/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "pwtp/ops.hpp"

namespace pwtp {

double enopr(const Tensor& residual) {
  if (residual.rank() != 4 && residual.rank() != 5) throw Error("enopr: expected [N x] T x H x W x C residual");
  const std::size_t samples = residual.rank() == 5 ? residual.dim(0) : 1;
  const std::size_t per_sample = residual.size() / samples;
  const std::size_t t = residual.dim(residual.rank() - 4);
  const std::size_t fibers = per_sample / t;
  double total = 0.0;
  for (std::size_t n = 0; n < samples; ++n) {
    double s = 0.0;
    const double* p = residual.ptr() + n * per_sample;
    for (std::size_t i = 0; i < per_sample; ++i) s += p[i] * p[i];
    total += s / static_cast<double>(fibers);
  }
  return total / static_cast<double>(samples);
}

ad::Var enopr(const ad::Var& residual) {
  const Shape& s = residual.shape();
  if (s.size() != 4) throw Error("enopr: expected G x T x P x C residual");
  const double fibers = static_cast<double>(s[2] * s[3]);
  return ad::scale(ad::sum_squares(residual), 1.0 / (fibers * static_cast<double>(s[0])));
}

double cross_entropy(std::span<const double> logits, std::size_t label, double smoothing) {
  ad::Tape tape;
  ad::Var z = tape.constant(Tensor(Shape{1, logits.size()}, std::vector<double>(logits.begin(), logits.end())));
  const std::size_t labels[] = {label};
  return ad::softmax_cross_entropy(z, labels, smoothing).value().item();
}

double mgda_alpha(const std::vector<double>& g1, const std::vector<double>& g2) {
  if (g1.size() != g2.size()) throw Error("mgda_alpha: gradient lengths differ");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    if (!std::isfinite(g1[i]) || !std::isfinite(g2[i])) throw Error("mgda_alpha: non-finite gradient");
    const double diff = g2[i] - g1[i];
    num += diff * g2[i];
    den += diff * diff;
  }
  if (den < 1e-24) return 0.5;
  return std::clamp(num / den, 0.0, 1.0);
}

namespace {

void check_schedule(const SchedulerConfig& cfg) {
  if (!(cfg.gamma > 0.0 && cfg.gamma < 1.0)) throw Error("scale_schedule: gamma must lie in (0, 1)");
  if (!(cfg.lambda > 0.0 && cfg.lambda <= 1.0)) throw Error("scale_schedule: lambda must lie in (0, 1]");
  if (cfg.total < 1 || cfg.current < 1 || cfg.current > cfg.total) {
    throw Error("scale_schedule: iteration must satisfy 1 <= m <= M");
  }
}

}  // namespace

double schedule_first_branch(const SchedulerConfig& cfg) {
  check_schedule(cfg);
  const double m = static_cast<double>(cfg.current);
  const double split = cfg.gamma * static_cast<double>(cfg.total);
  // log base (gamma*M)^(pi / acos(2*lambda - 1)); lands on lambda at m = gamma*M.
  const double angle = std::acos(2.0 * cfg.lambda - 1.0);
  if (angle == 0.0 || m == 1.0) return 1.0;
  if (split <= 1.0) throw Error("scale_schedule: first branch undefined for gamma*M <= 1");
  const double log_base = std::numbers::pi / angle * std::log(split);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * std::log(m) / log_base));
}

double schedule_second_branch(const SchedulerConfig& cfg) {
  check_schedule(cfg);
  const double m = static_cast<double>(cfg.current);
  const double end = (1.0 - cfg.gamma) * static_cast<double>(cfg.total);
  if (m == 1.0) return cfg.lambda;
  if (end <= 1.0) throw Error("scale_schedule: second branch undefined for (1-gamma)*M <= 1");
  return 0.5 * cfg.lambda * (1.0 + std::cos(std::numbers::pi * std::log(m) / std::log(end)));
}

double scale_schedule(const SchedulerConfig& cfg) {
  check_schedule(cfg);
  const double m = static_cast<double>(cfg.current);
  const double split = cfg.gamma * static_cast<double>(cfg.total);
  const double end = (1.0 - cfg.gamma) * static_cast<double>(cfg.total);
  double alpha;
  if (m < split) {
    alpha = schedule_first_branch(cfg);
  } else if (m >= end) {
    alpha = 0.0;  // held at zero past the branch's first zero
  } else {
    alpha = schedule_second_branch(cfg);
  }
  return std::clamp(alpha, 0.0, 1.0);
}

JointMode JointMode::constant(double a) {
  JointMode m{Kind::constant};
  m.alpha = a;
  m.validate();
  return m;
}

JointMode JointMode::scheduled(double gamma, double lambda) {
  JointMode m{Kind::scheduled};
  m.gamma = gamma;
  m.lambda = lambda;
  m.validate();
  return m;
}

namespace {

double parse_number(const std::string& s, const std::string& context) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw Error("invalid number '" + s + "' in " + context);
  return v;
}

}  // namespace

JointMode JointMode::parse(const std::string& text) {
  if (text == "separate") return separate();
  if (text == "mgda") return mgda();
  if (text.rfind("constant:", 0) == 0) return constant(parse_number(text.substr(9), "joint mode"));
  if (text.rfind("sched:", 0) == 0) {
    const std::string rest = text.substr(6);
    const auto comma = rest.find(',');
    if (comma == std::string::npos) throw Error("joint mode 'sched' needs <gamma>,<lambda>");
    return scheduled(parse_number(rest.substr(0, comma), "joint mode"),
                     parse_number(rest.substr(comma + 1), "joint mode"));
  }
  throw Error("unknown joint mode '" + text + "' (expected separate|constant:<a>|mgda|sched:<g>,<l>)");
}

std::string JointMode::to_string() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::separate: os << "separate"; break;
    case Kind::constant: os << "constant:" << alpha; break;
    case Kind::mgda: os << "mgda"; break;
    case Kind::scheduled: os << "sched:" << gamma << ',' << lambda; break;
  }
  return os.str();
}

void JointMode::validate() const {
  if (kind == Kind::constant && !(alpha >= 0.0 && alpha <= 1.0)) throw Error("constant alpha must lie in [0, 1]");
  if (kind == Kind::scheduled) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw Error("scheduler gamma must lie in (0, 1)");
    if (!(lambda > 0.0 && lambda <= 1.0)) throw Error("scheduler lambda must lie in (0, 1]");
  }
}

double resolve_alpha(const JointMode& mode, const TaskGradients& grads, std::size_t step, std::size_t total) {
  switch (mode.kind) {
    case JointMode::Kind::constant: return mode.alpha;
    case JointMode::Kind::mgda: return mgda_alpha(grads.g1, grads.g2);
    case JointMode::Kind::scheduled: return scale_schedule({mode.gamma, mode.lambda, total, step});
    case JointMode::Kind::separate: break;
  }
  throw Error("separate training has no joint scale");
}

std::vector<double> combine(const std::vector<double>& g1, const std::vector<double>& g2, double alpha) {
  if (g1.size() != g2.size()) throw Error("combine: gradient lengths differ");
  std::vector<double> out(g1.size());
  for (std::size_t i = 0; i < g1.size(); ++i) out[i] = alpha * g1[i] + (1.0 - alpha) * g2[i];
  return out;
}

void joint_step(std::vector<double>& theta1, std::vector<double>& theta2, const TaskGradients& grads, double lr,
                double alpha) {
  if (theta1.size() != grads.g1.size() || theta2.size() != grads.h2.size()) {
    throw Error("joint_step: parameter and gradient lengths differ");
  }
  const std::vector<double> d1 = combine(grads.g1, grads.g2, alpha);
  for (std::size_t i = 0; i < theta1.size(); ++i) theta1[i] -= lr * d1[i];
  for (std::size_t i = 0; i < theta2.size(); ++i) theta2[i] -= lr * grads.h2[i];
}

double joint_step(ParamSet& theta1, ParamSet& theta2, const TaskGradients& grads, double lr, const JointMode& mode,
                  std::size_t step, std::size_t total) {
  const double alpha = resolve_alpha(mode, grads, step, total);
  std::vector<double> t1 = theta1.flatten(), t2 = theta2.flatten();
  joint_step(t1, t2, grads, lr, alpha);
  theta1.assign_flat(t1);
  theta2.assign_flat(t2);
  return alpha;
}

}  // namespace pwtp
