#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pwtp/autodiff.hpp"
#include "pwtp/param_set.hpp"
#include "pwtp/rng.hpp"
#include "pwtp/tensor.hpp"

namespace pwtp {

/// Basis-generating MLP shape. Defaults are the bottleneck configuration with
/// expansion 2, ratio 1/4 and a single block.
struct MlpConfig {
  double expansion = 2.0;    // r
  double bottleneck = 0.25;  // beta
  std::size_t blocks = 1;    // B
};

struct PwtpConfig {
  std::size_t frames = 8;         // T
  std::size_t rank = 1;           // D
  std::size_t kernel = 9;         // k
  std::size_t stride = 8;         // s
  std::size_t agg_channels = 24;  // C'
  MlpConfig mlp;
  double ridge = 1e-6;

  /// Throws Error when an invariant does not hold.
  void validate() const;

  std::size_t descriptor_length() const { return frames * (frames - 1) / 2; }
  std::size_t hidden_width() const;
  std::size_t bottleneck_width() const;
};

/// Theta^1: trainable tensors plus normalization running statistics, all named "theta1/...".
struct PwtpParams {
  ParamSet weights;
  ParamSet running;

  ParamSet all() const;
};

enum class NormMode {
  batch,    // statistics of the spatial positions of each segment
  running,  // stored running averages
};

constexpr double kNormEps = 1e-5;
constexpr double kRunningMomentum = 0.9;
constexpr std::size_t kInitAttempts = 5;

/// Expected tensor names and shapes for a config and input channel count.
ParamSet pwtp_param_shapes(const PwtpConfig& cfg, std::size_t channels);

/// Random initialization. Every per-pixel basis must have column rank D on a
/// random probe clip; otherwise the weights are redrawn, up to kInitAttempts
/// times before giving up.
PwtpParams init_pwtp_params(const PwtpConfig& cfg, std::size_t channels, Rng& rng);

/// Column-orthonormalized [1, t, t^2, ...] basis of shape T x D.
Tensor polynomial_basis(std::size_t frames, std::size_t rank);

/// Numerical rank of a rows x cols row-major matrix via Gaussian elimination.
std::size_t matrix_rank(std::span<const double> m, std::size_t rows, std::size_t cols, double rel_tol = 1e-9);

// Differentiable building blocks.

struct PwtpGraph {
  ad::Var aggregated;   // (G*T) x h x w x C'
  ad::Var descriptors;  // G x (h*w) x T(T-1)/2
  ad::Var bases;        // G x (H*W) x T x D
  ad::Var static_part;  // G x T x (H*W) x C
  ad::Var residual;     // G x T x (H*W) x C
  ad::Var da;           // G x H x W x C
  std::vector<Tensor> batch_means;  // per block, G x F (batch mode only)
  std::vector<Tensor> batch_vars;
};

/// Full operator over G segments of shape T x H x W x C (input G x T x H x W x C).
PwtpGraph pwtp_graph(const ad::Var& segments, const VarMap& theta1, const ParamSet& running,
                     const PwtpConfig& cfg, NormMode mode);

ad::Var aggregate_graph(const ad::Var& frames, const VarMap& theta1, const PwtpConfig& cfg);
ad::Var bases_graph(const ad::Var& descriptors, const VarMap& theta1, const ParamSet& running, const PwtpConfig& cfg,
                    std::size_t height, std::size_t width, NormMode mode, PwtpGraph* stats = nullptr);

/// Folds the batch statistics of a training forward pass into the running averages.
void update_running_stats(PwtpParams& params, const PwtpGraph& graph);

// Tensor-level API (no gradients).

/// x: T x H x W x C  ->  T x ceil(H/s) x ceil(W/s) x C'.
Tensor aggregate_conv(const Tensor& x, const PwtpParams& params, const PwtpConfig& cfg);

/// x_agg: T x h x w x C'  ->  (h*w) x T(T-1)/2.
Tensor temporal_descriptors(const Tensor& x_agg);

/// u: (h*w) x T(T-1)/2  ->  A: (H*W) x T x D.
Tensor generate_bases(const Tensor& u, const PwtpParams& params, const PwtpConfig& cfg, std::size_t height,
                      std::size_t width, NormMode mode = NormMode::running);

struct Projection {
  Tensor coeffs;       // (H*W) x D x C
  Tensor static_part;  // T x H x W x C
};

/// Per-pixel least-squares projection of x (T x H x W x C) onto A ((H*W) x T x D).
Projection project(const Tensor& x, const Tensor& bases, double ridge);

struct ResidualSplit {
  Tensor residual;  // x - x_hat
  Tensor da;        // temporal mean of the residual, H x W x C
};

ResidualSplit residual_and_da(const Tensor& x, const Tensor& x_hat);

struct SegmentDecomposition {
  Tensor static_part;  // T x H x W x C
  Tensor residual;     // T x H x W x C
  Tensor da;           // H x W x C
  Tensor bases;        // (H*W) x T x D
  Tensor coeffs;       // (H*W) x D x C
};

struct PwtpResult {
  Tensor da;  // S x H x W x C
  std::vector<SegmentDecomposition> segments;
};

/// Runs the operator on each of the S segments of clip (S x T x H x W x C).
PwtpResult pwtp_forward(const Tensor& clip, const PwtpParams& params, const PwtpConfig& cfg,
                        NormMode mode = NormMode::running);

}  // namespace pwtp
