#include "pwtp/linalg.hpp"

#include <cmath>
#include <vector>

namespace pwtp {

bool cholesky_factor(std::span<double> a, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    const double ljj = std::sqrt(d);
    a[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / ljj;
    }
    for (std::size_t k = j + 1; k < n; ++k) a[j * n + k] = 0.0;
  }
  return true;
}

void cholesky_solve(std::span<const double> l, std::size_t n, std::span<double> b, std::size_t cols) {
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = b[i * cols + c];
      for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * b[k * cols + c];
      b[i * cols + c] = s / l[i * n + i];
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = b[ii * cols + c];
      for (std::size_t k = ii + 1; k < n; ++k) s -= l[k * n + ii] * b[k * cols + c];
      b[ii * cols + c] = s / l[ii * n + ii];
    }
  }
}

Tensor spd_solve_batch(const Tensor& mats, const Tensor& rhs, double ridge) {
  if (mats.rank() != 3 || mats.dim(1) != mats.dim(2)) {
    throw Error("spd_solve_batch: matrices must be B x D x D, got " + shape_string(mats.shape()));
  }
  if (rhs.rank() != 3 || rhs.dim(0) != mats.dim(0) || rhs.dim(1) != mats.dim(1)) {
    throw Error("spd_solve_batch: rhs must be B x D x C, got " + shape_string(rhs.shape()));
  }
  if (ridge < 0.0) throw Error("spd_solve_batch: ridge must be non-negative");
  const std::size_t batch = mats.dim(0), d = mats.dim(1), c = rhs.dim(2);
  Tensor out = rhs;
  std::vector<double> work(d * d);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* m = mats.ptr() + b * d * d;
    for (std::size_t i = 0; i < d * d; ++i) work[i] = m[i];
    for (std::size_t i = 0; i < d; ++i) work[i * d + i] += ridge;
    if (!cholesky_factor(work, d)) throw SingularBasisError(b);
    cholesky_solve(work, d, out.data().subspan(b * d * c, d * c), c);
  }
  return out;
}

}  // namespace pwtp
