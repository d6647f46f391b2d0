#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pwtp/autodiff.hpp"
#include "pwtp/param_set.hpp"
#include "pwtp/tensor.hpp"

namespace pwtp {

/// Mean squared projection residual. For a T x H x W x C residual this is
/// (1/(HWC)) * sum over space-channel fibers of ||fiber||^2. A leading batch
/// axis (N x T x H x W x C) averages the per-sample values.
double enopr(const Tensor& residual);

/// Differentiable ENoPR over a G x T x P x C residual (mean over the G samples).
ad::Var enopr(const ad::Var& residual);

double cross_entropy(std::span<const double> logits, std::size_t label, double smoothing);

/// Convex weight of the min-norm combination alpha*g1 + (1-alpha)*g2, clamped
/// to [0,1]. Returns 0.5 when ||g1 - g2||^2 < 1e-24.
double mgda_alpha(const std::vector<double>& g1, const std::vector<double>& g2);

struct SchedulerConfig {
  double gamma = 0.2;   // branch split fraction
  double lambda = 0.1;  // value at the split
  std::size_t total = 1;    // M
  std::size_t current = 1;  // m, 1-based
};

/// Hybrid cosine-log scale schedule: the first branch for m < gamma*M, the
/// second for m >= gamma*M, held at 0 from m = (1-gamma)*M on, clamped to [0,1].
double scale_schedule(const SchedulerConfig& cfg);

/// The two branch formulas on their own, unclamped.
///   first:  0.5 * (1 + cos(pi * log_b m)),  b = (gamma*M)^(pi / acos(2*lambda - 1))
///   second: 0.5 * lambda * (1 + cos(pi * log_{(1-gamma)M} m))
double schedule_first_branch(const SchedulerConfig& cfg);
double schedule_second_branch(const SchedulerConfig& cfg);

struct JointMode {
  enum class Kind { separate, constant, mgda, scheduled };
  Kind kind = Kind::mgda;
  double alpha = 0.5;   // constant
  double gamma = 0.2;   // scheduled
  double lambda = 0.1;  // scheduled

  static JointMode separate() { return {Kind::separate}; }
  static JointMode constant(double a);
  static JointMode mgda() { return {Kind::mgda}; }
  static JointMode scheduled(double gamma, double lambda);

  /// Parses "separate", "constant:<a>", "mgda" or "sched:<gamma>,<lambda>".
  static JointMode parse(const std::string& text);
  std::string to_string() const;
  void validate() const;
};

struct TaskGradients {
  std::vector<double> g1;  // d L1 / d Theta1
  std::vector<double> g2;  // d L2 / d Theta1
  std::vector<double> h2;  // d L2 / d Theta2
};

/// Resolves the scale for one iteration: constant returns its alpha, mgda
/// solves for alpha from the gradients, scheduled evaluates the schedule at
/// `step` (1-based) of `total`. Separate mode has no single alpha and throws.
double resolve_alpha(const JointMode& mode, const TaskGradients& grads, std::size_t step, std::size_t total);

/// alpha*g1 + (1-alpha)*g2.
std::vector<double> combine(const std::vector<double>& g1, const std::vector<double>& g2, double alpha);

/// One plain gradient step with an already resolved alpha:
///   theta1 -= lr * (alpha*g1 + (1-alpha)*g2);  theta2 -= lr * h2.
void joint_step(std::vector<double>& theta1, std::vector<double>& theta2, const TaskGradients& grads, double lr,
                double alpha);

/// Same step on ParamSets (flattened in name order); returns the alpha used.
double joint_step(ParamSet& theta1, ParamSet& theta2, const TaskGradients& grads, double lr, const JointMode& mode,
                  std::size_t step = 1, std::size_t total = 1);

}  // namespace pwtp
