#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "pwtp/autodiff.hpp"
#include "pwtp/param_set.hpp"
#include "pwtp/rng.hpp"
#include "pwtp/tensor.hpp"

namespace pwtp {

/// Theta^2: the small convolutional head, all tensors named "theta2/...".
struct HeadParams {
  ParamSet weights;
};

constexpr std::size_t kHeadWidth1 = 16;
constexpr std::size_t kHeadWidth2 = 32;
constexpr double kHeadInputDelta = 1e-6;

enum class InputMode {
  da,            // dynamic appearance frames
  rgb_baseline,  // per-segment temporal mean of the raw frames
};

InputMode parse_input_mode(const std::string& text);
std::string to_string(InputMode mode);

ParamSet head_param_shapes(std::size_t channels, std::size_t classes);
HeadParams init_head_params(std::size_t channels, std::size_t classes, Rng& rng);

/// inputs: N x S x H x W x C  ->  N x K logits (segment logits averaged).
ad::Var head_graph(const ad::Var& inputs, const VarMap& theta2);

/// inputs: S x H x W x C  ->  K logits.
Tensor head_forward(const Tensor& inputs, const HeadParams& params);

/// Argmax with the lowest index winning ties.
std::size_t predict(std::span<const double> logits);

/// Temporal mean per segment: N x S x T x H x W x C (or S x T x H x W x C)
/// to N x S x H x W x C (or S x H x W x C).
Tensor segment_mean_frames(const Tensor& clips);

}  // namespace pwtp
