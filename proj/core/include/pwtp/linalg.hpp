#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "pwtp/tensor.hpp"

namespace pwtp {

/// Raised when a Cholesky pivot is not positive. `index` names the batch item
/// (or pixel, when raised from a projection).
class SingularBasisError : public Error {
 public:
  explicit SingularBasisError(std::size_t index)
      : Error("singular basis at index " + std::to_string(index)), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

/// In-place lower Cholesky factor of an n x n row-major matrix. Only the lower
/// triangle of `a` is read. Returns false on a non-positive pivot.
bool cholesky_factor(std::span<double> a, std::size_t n);

/// Solves L L^T z = b in place for `cols` right-hand-side columns stored row-major (n x cols).
void cholesky_solve(std::span<const double> l, std::size_t n, std::span<double> b, std::size_t cols);

/// Batched solve of (M_b + ridge*I) z_b = rhs_b.
/// mats: B x D x D (symmetric), rhs: B x D x C. Returns B x D x C.
Tensor spd_solve_batch(const Tensor& mats, const Tensor& rhs, double ridge);

}  // namespace pwtp
