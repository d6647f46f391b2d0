#include "pwtp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include <Eigen/Core>

#include "pwtp/linalg.hpp"

namespace pwtp::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColVec = Eigen::Matrix<double, Eigen::Dynamic, 1>;

Eigen::Map<RowMat> mat(double* p, std::size_t r, std::size_t c) {
  return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}
Eigen::Map<const RowMat> cmat(const double* p, std::size_t r, std::size_t c) {
  return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}
Eigen::Map<ColVec> vec(double* p, std::size_t n) { return {p, static_cast<Eigen::Index>(n)}; }
Eigen::Map<const ColVec> cvec(const double* p, std::size_t n) { return {p, static_cast<Eigen::Index>(n)}; }

void accumulate(Tensor* dst, const Tensor& src, double s = 1.0) {
  if (!dst) return;
  double* d = dst->ptr();
  const double* g = src.ptr();
  const std::size_t n = src.size();
  for (std::size_t i = 0; i < n; ++i) d[i] += s * g[i];
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const double* bv = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record(std::move(out), {a, b}, [](const GradContext& c) {
    accumulate(c.in_grads[0], c.out_grad);
    accumulate(c.in_grads[1], c.out_grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const double* bv = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape().record(std::move(out), {a, b}, [](const GradContext& c) {
    accumulate(c.in_grads[0], c.out_grad);
    accumulate(c.in_grads[1], c.out_grad, -1.0);
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return a.tape().record(std::move(out), {a}, [s](const GradContext& c) { accumulate(c.in_grads[0], c.out_grad, s); });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [](const GradContext& c) { accumulate(c.in_grads[0], c.out_grad); });
}

Var sum_squares(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  return a.tape().record(Tensor::scalar(s), {a}, [](const GradContext& c) {
    if (!c.in_grads[0]) return;
    const double g = 2.0 * c.out_grad[0];
    const Tensor& x = *c.in_values[0];
    double* d = c.in_grads[0]->ptr();
    for (std::size_t i = 0; i < x.size(); ++i) d[i] += g * x[i];
  });
}

Var mean_axis(const Var& a, std::size_t axis) {
  const Shape& in = a.shape();
  if (axis >= in.size()) throw Error("mean_axis: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t n = in[axis];
  if (n == 0) throw Error("mean_axis: empty axis");
  Shape out_shape = in;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape, 0.0);
  const double* x = a.value().ptr();
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t o = 0; o < outer; ++o) {
    double* dst = out.ptr() + o * inner;
    for (std::size_t k = 0; k < n; ++k) {
      const double* src = x + (o * n + k) * inner;
      for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
    }
    for (std::size_t j = 0; j < inner; ++j) dst[j] *= inv;
  }
  return a.tape().record(std::move(out), {a}, [outer, inner, n, inv](const GradContext& c) {
    if (!c.in_grads[0]) return;
    double* d = c.in_grads[0]->ptr();
    const double* g = c.out_grad.ptr();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < inner; ++j) d[(o * n + k) * inner + j] += inv * g[o * inner + j];
  });
}

Var consensus_mean(const Var& a) {
  const Shape& in = a.shape();
  if (in.size() != 3 || in[1] == 0) throw Error("consensus_mean: expected N x S x K with S >= 1");
  const std::size_t n = in[0], s = in[1], k = in[2];
  Tensor out(Shape{n, k}, 0.0);
  std::vector<double> column(s);
  const double* x = a.value().ptr();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t t = 0; t < s; ++t) column[t] = x[(i * s + t) * k + j];
      std::sort(column.begin(), column.end());
      double acc = 0.0;
      for (double v : column) acc += v;
      out[i * k + j] = acc / static_cast<double>(s);
    }
  }
  return a.tape().record(std::move(out), {a}, [n, s, k](const GradContext& c) {
    if (!c.in_grads[0]) return;
    double* d = c.in_grads[0]->ptr();
    const double inv = 1.0 / static_cast<double>(s);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < s; ++t)
        for (std::size_t j = 0; j < k; ++j) d[(i * s + t) * k + j] += inv * c.out_grad[i * k + j];
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0] || b.shape() != Shape{ws[1]}) {
    throw Error("linear: incompatible shapes " + shape_string(xs) + ", " + shape_string(ws) + ", " +
                shape_string(b.shape()));
  }
  const std::size_t rows = xs[0], in = xs[1], out_f = ws[1];
  Tensor out(Shape{rows, out_f}, 0.0);
  auto o = mat(out.ptr(), rows, out_f);
  o.noalias() = cmat(x.value().ptr(), rows, in) * cmat(w.value().ptr(), in, out_f);
  o.rowwise() += cvec(b.value().ptr(), out_f).transpose();
  return x.tape().record(std::move(out), {x, w, b}, [rows, in, out_f](const GradContext& c) {
    const auto g = cmat(c.out_grad.ptr(), rows, out_f);
    if (Tensor* dx = c.in_grads[0]) {
      mat(dx->ptr(), rows, in).noalias() += g * cmat(c.in_values[1]->ptr(), in, out_f).transpose();
    }
    if (Tensor* dw = c.in_grads[1]) {
      mat(dw->ptr(), in, out_f).noalias() += cmat(c.in_values[0]->ptr(), rows, in).transpose() * g;
    }
    if (Tensor* db = c.in_grads[2]) {
      vec(db->ptr(), out_f) += g.colwise().sum().transpose();
    }
  });
}

Var gelu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return a.tape().record(std::move(out), {a}, [](const GradContext& c) {
    if (!c.in_grads[0]) return;
    const Tensor& x = *c.in_values[0];
    double* d = c.in_grads[0]->ptr();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      d[i] += c.out_grad[i] * (cdf + v * pdf);
    }
  });
}

Var standardize(const Var& x, double delta) {
  const Shape& xs = x.shape();
  if (xs.size() != 2 || xs[1] == 0) throw Error("standardize: expected R x P input, got " + shape_string(xs));
  const std::size_t rows = xs[0], cols = xs[1];
  Tensor out(xs);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const double inv_cols = 1.0 / static_cast<double>(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.value().ptr() + r * cols;
    double mean = 0.0;
    for (std::size_t i = 0; i < cols; ++i) mean += xr[i];
    mean *= inv_cols;
    double var = 0.0;
    for (std::size_t i = 0; i < cols; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var *= inv_cols;
    const double is = 1.0 / std::sqrt(var + delta * delta);
    (*inv_std)[r] = is;
    double* o = out.ptr() + r * cols;
    for (std::size_t i = 0; i < cols; ++i) o[i] = (xr[i] - mean) * is;
  }
  return x.tape().record(std::move(out), {x}, [inv_std, rows, cols, inv_cols](const GradContext& c) {
    if (!c.in_grads[0]) return;
    const double* y = c.out_value.ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = c.out_grad.ptr() + r * cols;
      const double* yr = y + r * cols;
      double gsum = 0.0, gy = 0.0;
      for (std::size_t i = 0; i < cols; ++i) {
        gsum += g[i];
        gy += g[i] * yr[i];
      }
      gsum *= inv_cols;
      gy *= inv_cols;
      double* d = c.in_grads[0]->ptr() + r * cols;
      for (std::size_t i = 0; i < cols; ++i) d[i] += (*inv_std)[r] * (g[i] - gsum - yr[i] * gy);
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, double eps, Tensor* batch_mean, Tensor* batch_var) {
  const Shape& xs = x.shape();
  if (xs.size() != 3 || gamma.shape() != Shape{xs[2]} || beta.shape() != Shape{xs[2]} || xs[1] == 0) {
    throw Error("batch_norm: expected G x R x F input with length-F affine, got " + shape_string(xs));
  }
  const std::size_t groups = xs[0], rows = xs[1], feats = xs[2];
  auto normalized = std::make_shared<std::vector<double>>(x.value().size());
  auto inv_std = std::make_shared<std::vector<double>>(groups * feats);
  Tensor mean(Shape{groups, feats}, 0.0), var(Shape{groups, feats}, 0.0);
  const double* xv = x.value().ptr();
  const double inv_rows = 1.0 / static_cast<double>(rows);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t f = 0; f < feats; ++f) mean[g * feats + f] += xv[(g * rows + r) * feats + f];
    for (std::size_t f = 0; f < feats; ++f) mean[g * feats + f] *= inv_rows;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t f = 0; f < feats; ++f) {
        const double d = xv[(g * rows + r) * feats + f] - mean[g * feats + f];
        var[g * feats + f] += d * d;
      }
    for (std::size_t f = 0; f < feats; ++f) {
      var[g * feats + f] *= inv_rows;
      (*inv_std)[g * feats + f] = 1.0 / std::sqrt(var[g * feats + f] + eps);
    }
  }
  Tensor out(xs, 0.0);
  const double* gv = gamma.value().ptr();
  const double* bv = beta.value().ptr();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t f = 0; f < feats; ++f) {
        const std::size_t i = (g * rows + r) * feats + f;
        const double xh = (xv[i] - mean[g * feats + f]) * (*inv_std)[g * feats + f];
        (*normalized)[i] = xh;
        out[i] = gv[f] * xh + bv[f];
      }
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;
  return x.tape().record(
      std::move(out), {x, gamma, beta}, [groups, rows, feats, normalized, inv_std](const GradContext& c) {
        const double* g = c.out_grad.ptr();
        const double* gv = c.in_values[1]->ptr();
        const auto& xh = *normalized;
        std::vector<double> sum_g(feats), sum_gx(feats);
        for (std::size_t grp = 0; grp < groups; ++grp) {
          std::fill(sum_g.begin(), sum_g.end(), 0.0);
          std::fill(sum_gx.begin(), sum_gx.end(), 0.0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t f = 0; f < feats; ++f) {
              const std::size_t i = (grp * rows + r) * feats + f;
              sum_g[f] += g[i];
              sum_gx[f] += g[i] * xh[i];
            }
          if (Tensor* dgamma = c.in_grads[1])
            for (std::size_t f = 0; f < feats; ++f) (*dgamma)[f] += sum_gx[f];
          if (Tensor* dbeta = c.in_grads[2])
            for (std::size_t f = 0; f < feats; ++f) (*dbeta)[f] += sum_g[f];
          if (Tensor* dx = c.in_grads[0]) {
            const double inv_rows = 1.0 / static_cast<double>(rows);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t f = 0; f < feats; ++f) {
                const std::size_t i = (grp * rows + r) * feats + f;
                const double k = gv[f] * (*inv_std)[grp * feats + f];
                (*dx)[i] += k * (g[i] - inv_rows * sum_g[f] - xh[i] * inv_rows * sum_gx[f]);
              }
          }
        }
      });
}

Var fixed_norm(const Var& x, const Tensor& mean, const Tensor& var, const Var& gamma, const Var& beta, double eps) {
  const Shape& xs = x.shape();
  if (xs.empty()) throw Error("fixed_norm: scalar input");
  const std::size_t feats = xs.back();
  if (mean.shape() != Shape{feats} || var.shape() != Shape{feats} || gamma.shape() != Shape{feats} ||
      beta.shape() != Shape{feats}) {
    throw Error("fixed_norm: statistics do not match feature count");
  }
  auto inv_std = std::make_shared<std::vector<double>>(feats);
  for (std::size_t f = 0; f < feats; ++f) (*inv_std)[f] = 1.0 / std::sqrt(var[f] + eps);
  auto mu = std::make_shared<std::vector<double>>(mean.data().begin(), mean.data().end());
  Tensor out(xs, 0.0);
  const double* xv = x.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t f = i % feats;
    out[i] = gamma.value()[f] * (xv[i] - (*mu)[f]) * (*inv_std)[f] + beta.value()[f];
  }
  return x.tape().record(std::move(out), {x, gamma, beta}, [feats, inv_std, mu](const GradContext& c) {
    const Tensor& xv = *c.in_values[0];
    const Tensor& gv = *c.in_values[1];
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const std::size_t f = i % feats;
      const double xh = (xv[i] - (*mu)[f]) * (*inv_std)[f];
      if (c.in_grads[0]) (*c.in_grads[0])[i] += c.out_grad[i] * gv[f] * (*inv_std)[f];
      if (c.in_grads[1]) (*c.in_grads[1])[f] += c.out_grad[i] * xh;
      if (c.in_grads[2]) (*c.in_grads[2])[f] += c.out_grad[i];
    }
  });
}

ConvGeometry ceil_geometry(std::size_t h, std::size_t w, std::size_t kernel, std::size_t stride) {
  if (kernel == 0 || stride == 0) throw Error("conv: kernel and stride must be positive");
  ConvGeometry geo;
  geo.kernel = kernel;
  geo.stride = stride;
  geo.out_h = (h + stride - 1) / stride;
  geo.out_w = (w + stride - 1) / stride;
  const auto total_pad = [&](std::size_t in, std::size_t out) -> std::size_t {
    const std::size_t need = (out - 1) * stride + kernel;
    return need > in ? need - in : 0;
  };
  geo.pad_top = total_pad(h, geo.out_h) / 2;
  geo.pad_left = total_pad(w, geo.out_w) / 2;
  return geo;
}

namespace {

struct ConvDims {
  std::size_t n, h, w, ci, co, k, s, oh, ow;
  std::ptrdiff_t pt, pl;
  std::size_t rows() const { return n * oh * ow; }
  std::size_t cols() const { return k * k * ci; }
};

// Patch matrix: one row per output position, k*k*ci columns in (ky, kx, c) order; zero where padded.
void im2col(const double* x, const ConvDims& d, double* cols) {
  const std::size_t width = d.cols();
  for (std::size_t b = 0; b < d.n; ++b)
    for (std::size_t oy = 0; oy < d.oh; ++oy)
      for (std::size_t ox = 0; ox < d.ow; ++ox) {
        double* row = cols + ((b * d.oh + oy) * d.ow + ox) * width;
        for (std::size_t ky = 0; ky < d.k; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * d.s + ky) - d.pt;
          for (std::size_t kx = 0; kx < d.k; ++kx) {
            double* dst = row + (ky * d.k + kx) * d.ci;
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.s + kx) - d.pl;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h) || ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) {
              std::fill(dst, dst + d.ci, 0.0);
              continue;
            }
            const double* src = x + ((b * d.h + static_cast<std::size_t>(iy)) * d.w + static_cast<std::size_t>(ix)) * d.ci;
            std::copy(src, src + d.ci, dst);
          }
        }
      }
}

void col2im_add(const double* cols, const ConvDims& d, double* dx) {
  const std::size_t width = d.cols();
  for (std::size_t b = 0; b < d.n; ++b)
    for (std::size_t oy = 0; oy < d.oh; ++oy)
      for (std::size_t ox = 0; ox < d.ow; ++ox) {
        const double* row = cols + ((b * d.oh + oy) * d.ow + ox) * width;
        for (std::size_t ky = 0; ky < d.k; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * d.s + ky) - d.pt;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t kx = 0; kx < d.k; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.s + kx) - d.pl;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
            const double* src = row + (ky * d.k + kx) * d.ci;
            double* dst = dx + ((b * d.h + static_cast<std::size_t>(iy)) * d.w + static_cast<std::size_t>(ix)) * d.ci;
            for (std::size_t c = 0; c < d.ci; ++c) dst[c] += src[c];
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const std::optional<Var>& bias, const ConvGeometry& geo) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[0] != geo.kernel || ws[1] != geo.kernel || ws[2] != xs[3]) {
    throw Error("conv2d: incompatible input " + shape_string(xs) + " and kernel " + shape_string(ws));
  }
  if (bias && bias->shape() != Shape{ws[3]}) throw Error("conv2d: bias length mismatch");
  const ConvDims d{xs[0],       xs[1],       xs[2],
                   xs[3],       ws[3],       geo.kernel,
                   geo.stride,  geo.out_h,   geo.out_w,
                   static_cast<std::ptrdiff_t>(geo.pad_top), static_cast<std::ptrdiff_t>(geo.pad_left)};

  Tensor out(Shape{d.n, d.oh, d.ow, d.co}, 0.0);
  {
    AlignedBuffer cols(d.rows() * d.cols());
    im2col(x.value().ptr(), d, cols.data());
    auto o = mat(out.ptr(), d.rows(), d.co);
    o.noalias() = cmat(cols.data(), d.rows(), d.cols()) * cmat(w.value().ptr(), d.cols(), d.co);
    if (bias) o.rowwise() += cvec(bias->value().ptr(), d.co).transpose();
  }

  BackwardFn backward = [d, has_bias = bias.has_value()](const GradContext& c) {
    const auto g = cmat(c.out_grad.ptr(), d.rows(), d.co);
    AlignedBuffer cols(d.rows() * d.cols());
    if (Tensor* dw = c.in_grads[1]) {
      im2col(c.in_values[0]->ptr(), d, cols.data());
      mat(dw->ptr(), d.cols(), d.co).noalias() += cmat(cols.data(), d.rows(), d.cols()).transpose() * g;
    }
    if (Tensor* dx = c.in_grads[0]) {
      mat(cols.data(), d.rows(), d.cols()).noalias() = g * cmat(c.in_values[1]->ptr(), d.cols(), d.co).transpose();
      col2im_add(cols.data(), d, dx->ptr());
    }
    if (has_bias) {
      if (Tensor* db = c.in_grads[2]) vec(db->ptr(), d.co) += g.colwise().sum().transpose();
    }
  };
  if (bias) return x.tape().record(std::move(out), {x, w, *bias}, std::move(backward));
  return x.tape().record(std::move(out), {x, w}, std::move(backward));
}

Var pair_products(const Var& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[1] < 2 || xs[3] == 0) throw Error("pair_products: expected G x T x P x F with T >= 2");
  const std::size_t groups = xs[0], t = xs[1], p = xs[2], f = xs[3];
  const std::size_t q = t * (t - 1) / 2;
  const double inv_f = 1.0 / static_cast<double>(f);
  Tensor out(Shape{groups, p, q}, 0.0);
  const double* xv = x.value().ptr();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < p; ++i) {
      std::size_t pair = 0;
      for (std::size_t t1 = 0; t1 < t; ++t1)
        for (std::size_t t2 = t1 + 1; t2 < t; ++t2, ++pair) {
          const double* a = xv + ((g * t + t1) * p + i) * f;
          const double* b = xv + ((g * t + t2) * p + i) * f;
          double s = 0.0;
          for (std::size_t c = 0; c < f; ++c) s += a[c] * b[c];
          out[(g * p + i) * q + pair] = s * inv_f;
        }
    }
  return x.tape().record(std::move(out), {x}, [groups, t, p, f, q, inv_f](const GradContext& c) {
    Tensor* dx = c.in_grads[0];
    if (!dx) return;
    const double* xv = c.in_values[0]->ptr();
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t i = 0; i < p; ++i) {
        std::size_t pair = 0;
        for (std::size_t t1 = 0; t1 < t; ++t1)
          for (std::size_t t2 = t1 + 1; t2 < t; ++t2, ++pair) {
            const double go = c.out_grad[(g * p + i) * q + pair] * inv_f;
            const std::size_t ia = ((g * t + t1) * p + i) * f;
            const std::size_t ib = ((g * t + t2) * p + i) * f;
            for (std::size_t cc = 0; cc < f; ++cc) {
              (*dx)[ia + cc] += go * xv[ib + cc];
              (*dx)[ib + cc] += go * xv[ia + cc];
            }
          }
      }
  });
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> corner_aligned_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  for (std::size_t o = 0; o < out; ++o) {
    if (out == 1 || in == 1) {
      taps[o] = {0, 0, 0.0};
      continue;
    }
    const double src = static_cast<double>(o * (in - 1)) / static_cast<double>(out - 1);
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 >= in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Var upsample_bilinear(const Var& x, std::size_t out_h, std::size_t out_w) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw Error("upsample_bilinear: expected G x h x w x F");
  const std::size_t groups = xs[0], h = xs[1], w = xs[2], f = xs[3];
  if (h == out_h && w == out_w) return reshape(x, xs);
  auto ty = std::make_shared<std::vector<Tap>>(corner_aligned_taps(h, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(corner_aligned_taps(w, out_w));
  Tensor out(Shape{groups, out_h, out_w, f}, 0.0);
  const double* xv = x.value().ptr();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const Tap& a = (*ty)[oy];
        const Tap& b = (*tx)[ox];
        const double w00 = (1 - a.w1) * (1 - b.w1), w01 = (1 - a.w1) * b.w1;
        const double w10 = a.w1 * (1 - b.w1), w11 = a.w1 * b.w1;
        const double* p00 = xv + ((g * h + a.i0) * w + b.i0) * f;
        const double* p01 = xv + ((g * h + a.i0) * w + b.i1) * f;
        const double* p10 = xv + ((g * h + a.i1) * w + b.i0) * f;
        const double* p11 = xv + ((g * h + a.i1) * w + b.i1) * f;
        double* o = out.ptr() + ((g * out_h + oy) * out_w + ox) * f;
        for (std::size_t c = 0; c < f; ++c) o[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
  return x.tape().record(std::move(out), {x}, [groups, h, w, f, out_h, out_w, ty, tx](const GradContext& c) {
    Tensor* dx = c.in_grads[0];
    if (!dx) return;
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t oy = 0; oy < out_h; ++oy)
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const Tap& a = (*ty)[oy];
          const Tap& b = (*tx)[ox];
          const double w00 = (1 - a.w1) * (1 - b.w1), w01 = (1 - a.w1) * b.w1;
          const double w10 = a.w1 * (1 - b.w1), w11 = a.w1 * b.w1;
          const double* go = c.out_grad.ptr() + ((g * out_h + oy) * out_w + ox) * f;
          double* p00 = dx->ptr() + ((g * h + a.i0) * w + b.i0) * f;
          double* p01 = dx->ptr() + ((g * h + a.i0) * w + b.i1) * f;
          double* p10 = dx->ptr() + ((g * h + a.i1) * w + b.i0) * f;
          double* p11 = dx->ptr() + ((g * h + a.i1) * w + b.i1) * f;
          for (std::size_t cc = 0; cc < f; ++cc) {
            p00[cc] += w00 * go[cc];
            p01[cc] += w01 * go[cc];
            p10[cc] += w10 * go[cc];
            p11[cc] += w11 * go[cc];
          }
        }
  });
}

namespace kernel {

Projection project(const Tensor& x, const Tensor& a, double ridge) {
  const Shape& xs = x.shape();
  const Shape& as = a.shape();
  if (xs.size() != 4 || as.size() != 4 || as[0] != xs[0] || as[1] != xs[2] || as[2] != xs[1]) {
    throw Error("project: clip " + shape_string(xs) + " and basis " + shape_string(as) + " disagree");
  }
  if (ridge < 0.0) throw Error("project: ridge must be non-negative");
  const std::size_t groups = xs[0], t = xs[1], p = xs[2], ch = xs[3], d = as[3];
  Projection r;
  r.x_hat = Tensor(xs, 0.0);
  r.coeffs = Tensor(Shape{groups, p, d, ch}, 0.0);
  r.factors.assign(groups * p * d * d, 0.0);
  const double* xv = x.ptr();
  const double* av = a.ptr();
  std::vector<double> rhs(d * ch);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < p; ++i) {
      const std::size_t pix = g * p + i;
      const double* ai = av + pix * t * d;  // T x D
      std::span<double> m(r.factors.data() + pix * d * d, d * d);
      for (std::size_t u = 0; u < d; ++u)
        for (std::size_t v = 0; v <= u; ++v) {
          double s = 0.0;
          for (std::size_t tt = 0; tt < t; ++tt) s += ai[tt * d + u] * ai[tt * d + v];
          m[u * d + v] = s;
          m[v * d + u] = s;
        }
      for (std::size_t u = 0; u < d; ++u) m[u * d + u] += ridge;
      if (!cholesky_factor(m, d)) throw SingularBasisError(pix);
      std::fill(rhs.begin(), rhs.end(), 0.0);
      for (std::size_t tt = 0; tt < t; ++tt) {
        const double* xt = xv + ((g * t + tt) * p + i) * ch;
        for (std::size_t u = 0; u < d; ++u) {
          const double au = ai[tt * d + u];
          for (std::size_t c = 0; c < ch; ++c) rhs[u * ch + c] += au * xt[c];
        }
      }
      cholesky_solve(m, d, rhs, ch);
      std::copy(rhs.begin(), rhs.end(), r.coeffs.ptr() + pix * d * ch);
      for (std::size_t tt = 0; tt < t; ++tt) {
        double* o = r.x_hat.ptr() + ((g * t + tt) * p + i) * ch;
        for (std::size_t u = 0; u < d; ++u) {
          const double au = ai[tt * d + u];
          for (std::size_t c = 0; c < ch; ++c) o[c] += au * rhs[u * ch + c];
        }
      }
    }
  return r;
}

}  // namespace kernel

Var project(const Var& x, const Var& a, double ridge) {
  auto proj = std::make_shared<kernel::Projection>(kernel::project(x.value(), a.value(), ridge));
  Tensor x_hat = proj->x_hat;
  const Shape& xs = x.shape();
  const std::size_t groups = xs[0], t = xs[1], p = xs[2], ch = xs[3], d = a.shape()[3];
  return x.tape().record(std::move(x_hat), {x, a}, [proj, groups, t, p, ch, d](const GradContext& c) {
    Tensor* dx = c.in_grads[0];
    Tensor* da = c.in_grads[1];
    const double* xv = c.in_values[0]->ptr();
    const double* av = c.in_values[1]->ptr();
    const double* g = c.out_grad.ptr();
    std::vector<double> ybar(d * ch), bbar(d * ch), mbar(d * d);
    for (std::size_t grp = 0; grp < groups; ++grp)
      for (std::size_t i = 0; i < p; ++i) {
        const std::size_t pix = grp * p + i;
        const double* ai = av + pix * t * d;
        const double* y = proj->coeffs.ptr() + pix * d * ch;
        std::span<const double> l(proj->factors.data() + pix * d * d, d * d);
        // x_hat = A y  ->  ybar = A^T g
        std::fill(ybar.begin(), ybar.end(), 0.0);
        for (std::size_t tt = 0; tt < t; ++tt) {
          const double* gt = g + ((grp * t + tt) * p + i) * ch;
          for (std::size_t u = 0; u < d; ++u)
            for (std::size_t cc = 0; cc < ch; ++cc) ybar[u * ch + cc] += ai[tt * d + u] * gt[cc];
        }
        // y = M^-1 b  ->  bbar = M^-1 ybar, Mbar = -bbar y^T
        bbar = ybar;
        cholesky_solve(l, d, bbar, ch);
        for (std::size_t u = 0; u < d; ++u)
          for (std::size_t v = 0; v < d; ++v) {
            double s = 0.0;
            for (std::size_t cc = 0; cc < ch; ++cc) s += bbar[u * ch + cc] * y[v * ch + cc];
            mbar[u * d + v] = -s;
          }
        if (dx) {
          // b = A^T x  ->  xbar += A bbar
          for (std::size_t tt = 0; tt < t; ++tt) {
            double* dxt = dx->ptr() + ((grp * t + tt) * p + i) * ch;
            for (std::size_t u = 0; u < d; ++u)
              for (std::size_t cc = 0; cc < ch; ++cc) dxt[cc] += ai[tt * d + u] * bbar[u * ch + cc];
          }
        }
        if (da) {
          double* dai = da->ptr() + pix * t * d;
          for (std::size_t tt = 0; tt < t; ++tt) {
            const double* gt = g + ((grp * t + tt) * p + i) * ch;
            const double* xt = xv + ((grp * t + tt) * p + i) * ch;
            for (std::size_t u = 0; u < d; ++u) {
              double s = 0.0;
              // from x_hat = A y: g y^T; from b = A^T x: x bbar^T
              for (std::size_t cc = 0; cc < ch; ++cc) s += gt[cc] * y[u * ch + cc] + xt[cc] * bbar[u * ch + cc];
              // from M = A^T A + ridge I: A (Mbar + Mbar^T)
              for (std::size_t v = 0; v < d; ++v) s += ai[tt * d + v] * (mbar[v * d + u] + mbar[u * d + v]);
              dai[tt * d + u] += s;
            }
          }
        }
      }
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const std::size_t> labels, double smoothing) {
  const Shape& ls = logits.shape();
  if (ls.size() != 2 || ls[1] < 2) throw Error("cross_entropy: logits must be N x K with K >= 2");
  const std::size_t n = ls[0], k = ls[1];
  if (labels.size() != n) throw Error("cross_entropy: label count does not match batch");
  if (smoothing < 0.0 || smoothing >= 1.0) throw Error("cross_entropy: smoothing must lie in [0, 1)");
  for (auto lab : labels)
    if (lab >= k) throw Error("cross_entropy: label " + std::to_string(lab) + " out of range for K=" + std::to_string(k));
  auto probs = std::make_shared<std::vector<double>>(n * k);
  auto target = std::make_shared<std::vector<double>>(n * k);
  const double off = smoothing / static_cast<double>(k - 1);
  double loss = 0.0;
  const double* z = logits.value().ptr();
  for (std::size_t r = 0; r < n; ++r) {
    const double* zr = z + r * k;
    const double zmax = *std::max_element(zr, zr + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(zr[j] - zmax);
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) {
      const double logp = zr[j] - zmax - log_denom;
      const double q = j == labels[r] ? 1.0 - smoothing : off;
      (*probs)[r * k + j] = std::exp(logp);
      (*target)[r * k + j] = q;
      if (q > 0.0) loss -= q * logp;
    }
  }
  loss /= static_cast<double>(n);
  return logits.tape().record(Tensor::scalar(loss), {logits}, [n, k, probs, target](const GradContext& c) {
    Tensor* dz = c.in_grads[0];
    if (!dz) return;
    const double s = c.out_grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n * k; ++i) (*dz)[i] += s * ((*probs)[i] - (*target)[i]);
  });
}

}  // namespace pwtp::ad
