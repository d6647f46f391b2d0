#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "pwtp/autodiff.hpp"
#include "pwtp/tensor.hpp"

// The differentiable op set. Layouts are channels-last throughout.
namespace pwtp::ad {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var reshape(const Var& a, Shape shape);

/// Sum of squared entries, as a scalar.
Var sum_squares(const Var& a);

/// Arithmetic mean over one axis; the axis is removed from the shape.
Var mean_axis(const Var& a, std::size_t axis);

/// Mean over the middle axis of N x S x K, accumulated in sorted order per
/// (n, k) so the result does not depend on the order of the S entries.
Var consensus_mean(const Var& a);

/// x: R x I, w: I x O, b: O  ->  R x O.
Var linear(const Var& x, const Var& w, const Var& b);

/// Exact (erf) GELU.
Var gelu(const Var& a);

/// Row-wise standardization of x: R x P, (x - mean) / sqrt(var + delta^2) with
/// biased variance. No learned parameters.
Var standardize(const Var& x, double delta);

/// Per-group batch normalization of x: G x R x F over the R axis, with affine
/// gamma/beta of length F. When `batch_mean`/`batch_var` are non-null they
/// receive the G x F biased statistics used.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, double eps, Tensor* batch_mean = nullptr,
               Tensor* batch_var = nullptr);

/// Normalization with fixed statistics (inference): mean/var are length-F constants.
Var fixed_norm(const Var& x, const Tensor& mean, const Tensor& var, const Var& gamma, const Var& beta, double eps);

struct ConvGeometry {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad_top = 0;
  std::size_t pad_left = 0;
  std::size_t out_h = 0;
  std::size_t out_w = 0;
};

/// Zero-padded geometry producing ceil(H/s) x ceil(W/s) outputs; the total pad
/// per axis is max((out-1)*s + k - in, 0), split floor/ceil between the sides.
ConvGeometry ceil_geometry(std::size_t h, std::size_t w, std::size_t kernel, std::size_t stride);

/// x: N x H x W x Ci, w: k x k x Ci x Co, optional bias Co  ->  N x oh x ow x Co.
Var conv2d(const Var& x, const Var& w, const std::optional<Var>& bias, const ConvGeometry& geo);

/// Scaled inner products between every pair of time steps.
/// x: G x T x P x F  ->  G x P x T(T-1)/2, entries (1/F) <x[t1], x[t2]> for t1 < t2
/// in ascending (t1, t2) order.
Var pair_products(const Var& x);

/// Corner-aligned bilinear resize of G x h x w x F to G x H x W x F.
Var upsample_bilinear(const Var& x, std::size_t out_h, std::size_t out_w);

/// Per-pixel least-squares projection. x: G x T x P x C, a: G x P x T x D.
/// Returns x_hat with the shape of x, where x_hat_i = A_i (A_i^T A_i + ridge I)^-1 A_i^T x_i.
/// Throws SingularBasisError with the flat pixel index (g * P + i) on failure.
Var project(const Var& x, const Var& a, double ridge);

/// Label-smoothed softmax cross-entropy averaged over the N rows of logits (N x K).
Var softmax_cross_entropy(const Var& logits, std::span<const std::size_t> labels, double smoothing);

// Kernels shared with the non-differentiable API.
namespace kernel {

struct Projection {
  Tensor x_hat;   // G x T x P x C
  Tensor coeffs;  // G x P x D x C
  std::vector<double> factors;  // Cholesky factors, G*P blocks of D x D
};

Projection project(const Tensor& x, const Tensor& a, double ridge);

}  // namespace kernel

}  // namespace pwtp::ad
