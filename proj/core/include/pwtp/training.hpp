#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pwtp/gradcheck.hpp"
#include "pwtp/objectives.hpp"
#include "pwtp/param_set.hpp"
#include "pwtp/pwtp.hpp"
#include "pwtp/recognizer.hpp"
#include "pwtp/rng.hpp"

namespace pwtp {

struct TrainConfig {
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t steps = 2000;
  std::size_t batch = 8;  // clips per step
  std::size_t warmup_steps = 100;
  double weight_decay = 1e-4;  // applied to tensors named ".../w"
  std::uint64_t seed = 0;
  double grad_clip = 20.0;  // global L2 norm; 0 disables
  double label_smoothing = 0.1;

  void validate() const;
};

/// Linear warm-up to lr over warmup_steps, then cosine decay:
///   step < warmup: lr * (step + 1) / warmup
///   otherwise:     lr * 0.5 * (1 + cos(pi * step / steps))
/// `step` is 0-based.
double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t steps);

/// Scales grads in place so their global L2 norm is at most max_norm. Returns the norm before clipping.
double clip_global_norm(ParamSet& grads, double max_norm);

/// SGD with heavy-ball momentum and L2 weight decay added after clipping:
///   v = mu * v + (g + wd * theta);  theta -= lr * v
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  /// grads must name a subset of params.
  void step(ParamSet& params, const ParamSet& grads, double lr);

 private:
  double momentum_;
  double weight_decay_;
  ParamSet velocity_;
};

/// Draws mini-batches from a fresh permutation each epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t count, std::size_t batch, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  void reshuffle();
  std::size_t count_;
  std::size_t batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Rows [indices] of an N x ... tensor.
Tensor gather(const Tensor& stack, std::span<const std::size_t> indices);

struct UnsupLogRow {
  std::size_t step = 0;
  double enopr = 0.0;
  double lr = 0.0;
};

struct UnsupResult {
  PwtpParams params;
  std::vector<UnsupLogRow> log;
};

/// Minimizes ENoPR alone. clips: N x S x T x H x W x C.
UnsupResult train_unsupervised(const Tensor& clips, const PwtpConfig& pwtp_cfg, const TrainConfig& cfg);
UnsupResult train_unsupervised(const Tensor& clips, const PwtpConfig& pwtp_cfg, const TrainConfig& cfg,
                               PwtpParams init);

struct JointConfig {
  JointMode mode = JointMode::mgda();
  InputMode input = InputMode::da;
  std::size_t pretrain_steps = 500;  // separate mode only
};

struct JointLogRow {
  std::size_t step = 0;
  double enopr = 0.0;  // NaN when the input mode never runs the projector
  double loss2 = 0.0;
  double alpha = 0.0;  // NaN for the RGB baseline
};

struct JointResult {
  PwtpParams theta1;
  HeadParams theta2;
  std::vector<JointLogRow> log;
};

/// Joint training of projector and head. clips: N x S x T x H x W x C, labels in [0, classes).
/// Separate mode spends the first pretrain_steps on ENoPR alone, then freezes Theta^1.
JointResult train_joint(const Tensor& clips, std::span<const std::size_t> labels, std::size_t classes,
                        const PwtpConfig& pwtp_cfg, const TrainConfig& cfg, const JointConfig& joint);

/// Head inputs (N x S x H x W x C) for a clip stack under an input mode.
Tensor head_inputs(const Tensor& clips, const PwtpParams& theta1, const PwtpConfig& cfg, InputMode mode);

/// Top-1 accuracy of the head over a clip stack.
double evaluate(const Tensor& clips, std::span<const std::size_t> labels, const PwtpParams& theta1,
                const HeadParams& theta2, const PwtpConfig& cfg, InputMode mode);

/// Mean ENoPR of a clip stack under the given normalization mode.
double dataset_enopr(const Tensor& clips, const PwtpParams& params, const PwtpConfig& cfg,
                     NormMode mode = NormMode::running);

/// Checkpoint layout: Theta^1 weights and running statistics, plus Theta^2 when present.
ParamSet checkpoint_params(const PwtpParams& theta1, const HeadParams* theta2 = nullptr);

/// Splits a checkpoint back into Theta^1 and checks every expected tensor is present with the right shape.
PwtpParams load_theta1(const ParamSet& checkpoint, const PwtpConfig& cfg, std::size_t channels);

/// Theta^2 from a checkpoint; throws when any head tensor is missing.
HeadParams load_theta2(const ParamSet& checkpoint, std::size_t channels, std::size_t classes);

/// ENoPR of segments (G x T x H x W x C) as a function of the Theta^1 weights,
/// with batch-mode normalization. For grad_check.
Objective enopr_objective(Tensor segments, PwtpConfig cfg, ParamSet running);

/// Smoothed cross-entropy of head(DA(clips)) over the union of Theta^1 weights
/// and Theta^2. clips: N x S x T x H x W x C.
Objective recognition_objective(Tensor clips, std::vector<std::size_t> labels, PwtpConfig cfg, ParamSet running,
                                double smoothing);

}  // namespace pwtp
