#pragma once

// Reference implementations the tests compare against. Deliberately naive and
// independent of the library's kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

// Solves A X = B by Gaussian elimination with partial pivoting. B is n x cols.
inline Matrix gauss_solve(Matrix a, Matrix b) {
  const std::size_t n = a.size();
  const std::size_t cols = b.empty() ? 0 : b[0].size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t r = k + 1; r < n; ++r)
      if (std::abs(a[r][k]) > std::abs(a[piv][k])) piv = r;
    if (a[piv][k] == 0.0) throw std::runtime_error("oracle: singular system");
    std::swap(a[k], a[piv]);
    std::swap(b[k], b[piv]);
    for (std::size_t r = k + 1; r < n; ++r) {
      const double f = a[r][k] / a[k][k];
      for (std::size_t c = k; c < n; ++c) a[r][c] -= f * a[k][c];
      for (std::size_t c = 0; c < cols; ++c) b[r][c] -= f * b[k][c];
    }
  }
  Matrix x(n, std::vector<double>(cols, 0.0));
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t i = n; i-- > 0;) {
      double s = b[i][c];
      for (std::size_t j = i + 1; j < n; ++j) s -= a[i][j] * x[j][c];
      x[i][c] = s / a[i][i];
    }
  }
  return x;
}

// Least-squares fit of x (length T) onto the columns of a (T x D, row-major)
// through the normal equations (A^T A + ridge I) y = A^T x. Returns A y.
inline std::vector<double> project(std::span<const double> a, std::size_t t, std::size_t d, std::span<const double> x,
                                   double ridge) {
  Matrix ata(d, std::vector<double>(d, 0.0));
  Matrix atx(d, std::vector<double>(1, 0.0));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t r = 0; r < t; ++r) ata[i][j] += a[r * d + i] * a[r * d + j];
    ata[i][i] += ridge;
    for (std::size_t r = 0; r < t; ++r) atx[i][0] += a[r * d + i] * x[r];
  }
  const Matrix y = gauss_solve(ata, atx);
  std::vector<double> out(t, 0.0);
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t i = 0; i < d; ++i) out[r] += a[r * d + i] * y[i][0];
  return out;
}

// Rank by row reduction with a relative pivot threshold.
inline std::size_t rank(Matrix m, double rel_tol = 1e-9) {
  const std::size_t rows = m.size();
  const std::size_t cols = rows ? m[0].size() : 0;
  double scale = 0.0;
  for (const auto& row : m)
    for (double v : row) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return 0;
  std::size_t r = 0;
  for (std::size_t c = 0; c < cols && r < rows; ++c) {
    std::size_t piv = r;
    for (std::size_t i = r + 1; i < rows; ++i)
      if (std::abs(m[i][c]) > std::abs(m[piv][c])) piv = i;
    if (std::abs(m[piv][c]) <= rel_tol * scale) continue;
    std::swap(m[r], m[piv]);
    for (std::size_t i = r + 1; i < rows; ++i) {
      const double f = m[i][c] / m[r][c];
      for (std::size_t j = c; j < cols; ++j) m[i][j] -= f * m[r][j];
    }
    ++r;
  }
  return r;
}

// ENoPR of one T x H x W x C residual by explicit loops over fibers.
inline double enopr(std::span<const double> p, std::size_t t, std::size_t h, std::size_t w, std::size_t c) {
  double total = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double fiber = 0.0;
        for (std::size_t f = 0; f < t; ++f) {
          const double v = p[((f * h + y) * w + x) * c + ch];
          fiber += v * v;
        }
        total += fiber;
      }
  return total / static_cast<double>(h * w * c);
}

inline double combo_norm2(const std::vector<double>& g1, const std::vector<double>& g2, double alpha) {
  double s = 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    const double v = alpha * g1[i] + (1.0 - alpha) * g2[i];
    s += v * v;
  }
  return s;
}

// Minimizer of ||alpha g1 + (1 - alpha) g2||^2 over a uniform grid on [0, 1].
inline double mgda_grid(const std::vector<double>& g1, const std::vector<double>& g2, double step) {
  const auto n = static_cast<std::size_t>(std::llround(1.0 / step));
  double best = 0.0, best_v = combo_norm2(g1, g2, 0.0);
  for (std::size_t i = 1; i <= n; ++i) {
    const double a = static_cast<double>(i) / static_cast<double>(n);
    const double v = combo_norm2(g1, g2, a);
    if (v < best_v) {
      best_v = v;
      best = a;
    }
  }
  return best;
}

inline std::uint64_t fnv1a(std::span<const double> data) {
  std::uint64_t h = 1469598103934665603ull;
  for (double v : data) {
    const auto* b = reinterpret_cast<const unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(double); ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

// Pearson chi-square statistic of an r x c contingency table.
inline double chi_square(const Matrix& table) {
  const std::size_t r = table.size(), c = table[0].size();
  std::vector<double> rows(r, 0.0), cols(c, 0.0);
  double n = 0.0;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      rows[i] += table[i][j];
      cols[j] += table[i][j];
      n += table[i][j];
    }
  double stat = 0.0;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double e = rows[i] * cols[j] / n;
      if (e > 0.0) stat += (table[i][j] - e) * (table[i][j] - e) / e;
    }
  return stat;
}

}  // namespace oracle
