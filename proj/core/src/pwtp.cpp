#include "pwtp/pwtp.hpp"

#include <algorithm>
#include <cmath>

#include "pwtp/ops.hpp"

namespace pwtp {

namespace {

std::string block_name(std::size_t j) { return "theta1/mlp/block" + std::to_string(j); }

void xavier_fill(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data()) v = rng.uniform(-a, a);
}

}  // namespace

void PwtpConfig::validate() const {
  if (frames < 2) throw Error("pwtp: T must be at least 2");
  if (rank < 1 || 2 * rank > frames) throw Error("pwtp: D must satisfy 1 <= D <= T/2");
  if (kernel < stride) throw Error("pwtp: kernel size must be >= stride");
  if (stride < 1) throw Error("pwtp: stride must be positive");
  if (agg_channels < 1) throw Error("pwtp: C' must be positive");
  if (!(mlp.expansion >= 1.0)) throw Error("pwtp: mlp expansion must be >= 1");
  if (!(mlp.bottleneck > 0.0 && mlp.bottleneck <= 1.0)) throw Error("pwtp: mlp bottleneck ratio must lie in (0, 1]");
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw Error("pwtp: ridge must be non-negative");
}

std::size_t PwtpConfig::hidden_width() const {
  return static_cast<std::size_t>(std::llround(mlp.expansion * static_cast<double>(descriptor_length())));
}

std::size_t PwtpConfig::bottleneck_width() const {
  const auto w = static_cast<std::size_t>(std::llround(mlp.bottleneck * static_cast<double>(hidden_width())));
  return std::max<std::size_t>(w, 1);
}

ParamSet PwtpParams::all() const {
  ParamSet out = weights;
  out.merge(running);
  return out;
}

ParamSet pwtp_param_shapes(const PwtpConfig& cfg, std::size_t channels) {
  cfg.validate();
  const std::size_t q = cfg.descriptor_length(), f = cfg.hidden_width(), fb = cfg.bottleneck_width();
  const std::size_t out = cfg.frames * cfg.rank;
  ParamSet p;
  p.insert("theta1/conv/w", Tensor(Shape{cfg.kernel, cfg.kernel, channels, cfg.agg_channels}));
  p.insert("theta1/mlp/fc_in/w", Tensor(Shape{q, f}));
  p.insert("theta1/mlp/fc_in/b", Tensor(Shape{f}));
  for (std::size_t j = 0; j < cfg.mlp.blocks; ++j) {
    const std::string b = block_name(j);
    p.insert(b + "/norm/gamma", Tensor(Shape{f}, 1.0));
    p.insert(b + "/norm/beta", Tensor(Shape{f}));
    p.insert(b + "/fc_down/w", Tensor(Shape{f, fb}));
    p.insert(b + "/fc_down/b", Tensor(Shape{fb}));
    p.insert(b + "/fc_up/w", Tensor(Shape{fb, f}));
    p.insert(b + "/fc_up/b", Tensor(Shape{f}));
  }
  p.insert("theta1/mlp/fc_out/w", Tensor(Shape{f, out}));
  p.insert("theta1/mlp/fc_out/b", Tensor(Shape{out}));
  return p;
}

Tensor polynomial_basis(std::size_t frames, std::size_t rank) {
  Tensor q(Shape{frames, rank}, 0.0);
  for (std::size_t d = 0; d < rank; ++d) {
    std::vector<double> col(frames);
    for (std::size_t t = 0; t < frames; ++t) col[t] = std::pow(static_cast<double>(t), static_cast<double>(d));
    // Two Gram-Schmidt passes keep the columns orthogonal to rounding.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t e = 0; e < d; ++e) {
        double s = 0.0;
        for (std::size_t t = 0; t < frames; ++t) s += col[t] * q[t * rank + e];
        for (std::size_t t = 0; t < frames; ++t) col[t] -= s * q[t * rank + e];
      }
    }
    double norm = 0.0;
    for (double v : col) norm += v * v;
    norm = std::sqrt(norm);
    for (std::size_t t = 0; t < frames; ++t) q[t * rank + d] = col[t] / norm;
  }
  return q;
}

std::size_t matrix_rank(std::span<const double> m, std::size_t rows, std::size_t cols, double rel_tol) {
  std::vector<double> a(m.begin(), m.end());
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return 0;
  const double tol = rel_tol * scale;
  std::size_t rank = 0;
  for (std::size_t c = 0; c < cols && rank < rows; ++c) {
    std::size_t piv = rank;
    for (std::size_t r = rank + 1; r < rows; ++r)
      if (std::abs(a[r * cols + c]) > std::abs(a[piv * cols + c])) piv = r;
    if (std::abs(a[piv * cols + c]) <= tol) continue;
    for (std::size_t k = 0; k < cols; ++k) std::swap(a[piv * cols + k], a[rank * cols + k]);
    for (std::size_t r = rank + 1; r < rows; ++r) {
      const double f = a[r * cols + c] / a[rank * cols + c];
      for (std::size_t k = c; k < cols; ++k) a[r * cols + k] -= f * a[rank * cols + k];
    }
    ++rank;
  }
  return rank;
}

namespace {

PwtpParams draw_params(const PwtpConfig& cfg, std::size_t channels, Rng& rng) {
  PwtpParams params;
  params.weights = pwtp_param_shapes(cfg, channels);
  const std::size_t k2 = cfg.kernel * cfg.kernel;
  for (auto& [name, t] : params.weights) {
    if (name == "theta1/conv/w") {
      xavier_fill(t, k2 * channels, k2 * cfg.agg_channels, rng);
    } else if (t.rank() == 2) {
      xavier_fill(t, t.dim(0), t.dim(1), rng);
    }
  }
  const Tensor basis = polynomial_basis(cfg.frames, cfg.rank);
  Tensor& out_bias = params.weights.get("theta1/mlp/fc_out/b");
  for (std::size_t i = 0; i < basis.size(); ++i) out_bias[i] = basis[i];
  const std::size_t f = cfg.hidden_width();
  for (std::size_t j = 0; j < cfg.mlp.blocks; ++j) {
    params.running.insert(block_name(j) + "/norm/running_mean", Tensor(Shape{f}, 0.0));
    params.running.insert(block_name(j) + "/norm/running_var", Tensor(Shape{f}, 1.0));
  }
  return params;
}

bool bases_full_rank(const Tensor& bases, std::size_t frames, std::size_t rank) {
  const std::size_t pixels = bases.size() / (frames * rank);
  for (std::size_t i = 0; i < pixels; ++i) {
    std::span<const double> a(bases.ptr() + i * frames * rank, frames * rank);
    if (matrix_rank(a, frames, rank) != rank) return false;
  }
  return true;
}

}  // namespace

PwtpParams init_pwtp_params(const PwtpConfig& cfg, std::size_t channels, Rng& rng) {
  cfg.validate();
  if (channels == 0) throw Error("pwtp: input must have at least one channel");
  const std::size_t side = std::max(cfg.kernel, 4 * cfg.stride);
  for (std::size_t attempt = 0; attempt < kInitAttempts; ++attempt) {
    PwtpParams params = draw_params(cfg, channels, rng);
    Tensor probe(Shape{1, cfg.frames, side, side, channels});
    for (auto& v : probe.data()) v = rng.uniform();
    ad::Tape tape;
    const VarMap theta1 = bind(tape, params.weights, false);
    const PwtpGraph g = pwtp_graph(tape.constant(probe), theta1, params.running, cfg, NormMode::batch);
    if (g.bases.value().all_finite() && bases_full_rank(g.bases.value(), cfg.frames, cfg.rank)) return params;
  }
  throw Error("pwtp: basis initialization stayed rank-deficient after " + std::to_string(kInitAttempts) +
              " attempts");
}

ad::Var aggregate_graph(const ad::Var& frames, const VarMap& theta1, const PwtpConfig& cfg) {
  const Shape& s = frames.shape();
  if (s.size() != 4) throw Error("aggregate_conv: expected frames x H x W x C");
  if (s[1] < cfg.kernel || s[2] < cfg.kernel) {
    throw Error("clip too small: " + std::to_string(s[1]) + "x" + std::to_string(s[2]) + " is smaller than the " +
                std::to_string(cfg.kernel) + "x" + std::to_string(cfg.kernel) + " kernel");
  }
  const auto geo = ad::ceil_geometry(s[1], s[2], cfg.kernel, cfg.stride);
  return ad::conv2d(frames, var(theta1, "theta1/conv/w"), std::nullopt, geo);
}

ad::Var bases_graph(const ad::Var& descriptors, const VarMap& theta1, const ParamSet& running, const PwtpConfig& cfg,
                    std::size_t height, std::size_t width, NormMode mode, PwtpGraph* stats) {
  const Shape& ds = descriptors.shape();  // G x (h*w) x Q
  if (ds.size() != 3 || ds[2] != cfg.descriptor_length()) {
    throw Error("generate_bases: descriptor shape " + shape_string(ds) + " does not match T");
  }
  const std::size_t groups = ds[0], positions = ds[1];
  const std::size_t h = (height + cfg.stride - 1) / cfg.stride, w = (width + cfg.stride - 1) / cfg.stride;
  if (positions != h * w) throw Error("generate_bases: descriptor grid does not match target size");
  const std::size_t f = cfg.hidden_width();

  ad::Var u = ad::reshape(descriptors, Shape{groups * positions, ds[2]});
  ad::Var hidden = ad::gelu(ad::linear(u, var(theta1, "theta1/mlp/fc_in/w"), var(theta1, "theta1/mlp/fc_in/b")));
  for (std::size_t j = 0; j < cfg.mlp.blocks; ++j) {
    const std::string b = block_name(j);
    ad::Var grouped = ad::reshape(hidden, Shape{groups, positions, f});
    ad::Var normed;
    if (mode == NormMode::batch) {
      Tensor mean, variance;
      normed = ad::batch_norm(grouped, var(theta1, b + "/norm/gamma"), var(theta1, b + "/norm/beta"), kNormEps, &mean,
                              &variance);
      if (stats) {
        stats->batch_means.push_back(std::move(mean));
        stats->batch_vars.push_back(std::move(variance));
      }
    } else {
      normed = ad::fixed_norm(grouped, running.get(b + "/norm/running_mean"), running.get(b + "/norm/running_var"),
                              var(theta1, b + "/norm/gamma"), var(theta1, b + "/norm/beta"), kNormEps);
    }
    normed = ad::reshape(normed, Shape{groups * positions, f});
    ad::Var down = ad::gelu(ad::linear(normed, var(theta1, b + "/fc_down/w"), var(theta1, b + "/fc_down/b")));
    ad::Var up = ad::gelu(ad::linear(down, var(theta1, b + "/fc_up/w"), var(theta1, b + "/fc_up/b")));
    hidden = ad::add(hidden, up);
  }
  ad::Var out = ad::linear(hidden, var(theta1, "theta1/mlp/fc_out/w"), var(theta1, "theta1/mlp/fc_out/b"));
  const std::size_t td = cfg.frames * cfg.rank;
  out = ad::reshape(out, Shape{groups, h, w, td});
  out = ad::upsample_bilinear(out, height, width);
  return ad::reshape(out, Shape{groups, height * width, cfg.frames, cfg.rank});
}

PwtpGraph pwtp_graph(const ad::Var& segments, const VarMap& theta1, const ParamSet& running,
                     const PwtpConfig& cfg, NormMode mode) {
  const Shape& s = segments.shape();
  if (s.size() != 5) throw Error("pwtp: expected segments x T x H x W x C, got " + shape_string(s));
  if (s[1] != cfg.frames) {
    throw Error("pwtp: segment has " + std::to_string(s[1]) + " frames, config expects " + std::to_string(cfg.frames));
  }
  const std::size_t groups = s[0], t = s[1], height = s[2], width = s[3], ch = s[4];
  PwtpGraph g;
  ad::Var frames = ad::reshape(segments, Shape{groups * t, height, width, ch});
  g.aggregated = aggregate_graph(frames, theta1, cfg);
  const Shape& as = g.aggregated.shape();
  ad::Var per_time = ad::reshape(g.aggregated, Shape{groups, t, as[1] * as[2], as[3]});
  g.descriptors = ad::pair_products(per_time);
  g.bases = bases_graph(g.descriptors, theta1, running, cfg, height, width, mode, &g);
  ad::Var x = ad::reshape(segments, Shape{groups, t, height * width, ch});
  g.static_part = ad::project(x, g.bases, cfg.ridge);
  g.residual = ad::sub(x, g.static_part);
  g.da = ad::reshape(ad::mean_axis(g.residual, 1), Shape{groups, height, width, ch});
  return g;
}

void update_running_stats(PwtpParams& params, const PwtpGraph& graph) {
  for (std::size_t j = 0; j < graph.batch_means.size(); ++j) {
    Tensor& rm = params.running.get(block_name(j) + "/norm/running_mean");
    Tensor& rv = params.running.get(block_name(j) + "/norm/running_var");
    const Tensor& bm = graph.batch_means[j];
    const Tensor& bv = graph.batch_vars[j];
    const std::size_t groups = bm.dim(0), f = bm.dim(1);
    for (std::size_t c = 0; c < f; ++c) {
      double m = 0.0, v = 0.0;
      for (std::size_t g = 0; g < groups; ++g) {
        m += bm[g * f + c];
        v += bv[g * f + c];
      }
      m /= static_cast<double>(groups);
      v /= static_cast<double>(groups);
      rm[c] = kRunningMomentum * rm[c] + (1.0 - kRunningMomentum) * m;
      rv[c] = kRunningMomentum * rv[c] + (1.0 - kRunningMomentum) * v;
    }
  }
}

Tensor aggregate_conv(const Tensor& x, const PwtpParams& params, const PwtpConfig& cfg) {
  if (x.rank() != 4) throw Error("aggregate_conv: expected T x H x W x C");
  ad::Tape tape;
  const VarMap theta1 = bind(tape, params.weights, false);
  return aggregate_graph(tape.constant(x), theta1, cfg).value();
}

Tensor temporal_descriptors(const Tensor& x_agg) {
  if (x_agg.rank() != 4) throw Error("temporal_descriptors: expected T x h x w x C'");
  const Shape& s = x_agg.shape();
  ad::Tape tape;
  ad::Var x = tape.constant(x_agg.reshaped(Shape{1, s[0], s[1] * s[2], s[3]}));
  const Tensor& u = ad::pair_products(x).value();
  return u.reshaped(Shape{s[1] * s[2], u.dim(2)});
}

Tensor generate_bases(const Tensor& u, const PwtpParams& params, const PwtpConfig& cfg, std::size_t height,
                      std::size_t width, NormMode mode) {
  if (!u.all_finite()) throw Error("generate_bases: descriptors must be finite");
  if (u.rank() != 2) throw Error("generate_bases: expected (h*w) x T(T-1)/2 descriptors");
  ad::Tape tape;
  const VarMap theta1 = bind(tape, params.weights, false);
  ad::Var d = tape.constant(u.reshaped(Shape{1, u.dim(0), u.dim(1)}));
  const Tensor& a = bases_graph(d, theta1, params.running, cfg, height, width, mode).value();
  return a.reshaped(Shape{height * width, cfg.frames, cfg.rank});
}

Projection project(const Tensor& x, const Tensor& bases, double ridge) {
  if (x.rank() != 4 || bases.rank() != 3) throw Error("project: expected T x H x W x C clip and (H*W) x T x D basis");
  const Shape& s = x.shape();
  auto r = ad::kernel::project(x.reshaped(Shape{1, s[0], s[1] * s[2], s[3]}),
                               bases.reshaped(Shape{1, bases.dim(0), bases.dim(1), bases.dim(2)}), ridge);
  Projection out;
  out.coeffs = r.coeffs.reshaped(Shape{bases.dim(0), bases.dim(2), s[3]});
  out.static_part = r.x_hat.reshaped(s);
  return out;
}

ResidualSplit residual_and_da(const Tensor& x, const Tensor& x_hat) {
  require_same_shape(x, x_hat, "residual_and_da");
  if (x.rank() != 4) throw Error("residual_and_da: expected T x H x W x C");
  ResidualSplit out;
  out.residual = Tensor(x.shape(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) out.residual[i] = x[i] - x_hat[i];
  const std::size_t t = x.dim(0), plane = x.size() / t;
  out.da = Tensor(Shape{x.dim(1), x.dim(2), x.dim(3)}, 0.0);
  for (std::size_t tt = 0; tt < t; ++tt)
    for (std::size_t i = 0; i < plane; ++i) out.da[i] += out.residual[tt * plane + i];
  for (auto& v : out.da.data()) v /= static_cast<double>(t);
  return out;
}

PwtpResult pwtp_forward(const Tensor& clip, const PwtpParams& params, const PwtpConfig& cfg, NormMode mode) {
  if (clip.rank() != 5) throw Error("pwtp_forward: expected S x T x H x W x C clip");
  const Shape& s = clip.shape();
  ad::Tape tape;
  const VarMap theta1 = bind(tape, params.weights, false);
  const PwtpGraph g = pwtp_graph(tape.constant(clip), theta1, params.running, cfg, mode);

  const std::size_t segs = s[0], t = s[1], h = s[2], w = s[3], ch = s[4];
  const std::size_t seg_size = t * h * w * ch, pix = h * w, d = cfg.rank;
  // Coefficients are recomputed with the same kernel so they match static_part exactly.
  const auto proj = ad::kernel::project(clip.reshaped(Shape{segs, t, pix, ch}), g.bases.value(), cfg.ridge);

  PwtpResult out;
  out.da = g.da.value();
  out.segments.reserve(segs);
  for (std::size_t i = 0; i < segs; ++i) {
    SegmentDecomposition seg;
    const auto slice = [&](const Tensor& src, std::size_t stride, Shape shape) {
      std::vector<double> v(src.ptr() + i * stride, src.ptr() + (i + 1) * stride);
      return Tensor(std::move(shape), std::move(v));
    };
    seg.static_part = slice(g.static_part.value(), seg_size, Shape{t, h, w, ch});
    seg.residual = slice(g.residual.value(), seg_size, Shape{t, h, w, ch});
    seg.da = slice(g.da.value(), pix * ch, Shape{h, w, ch});
    seg.bases = slice(g.bases.value(), pix * t * d, Shape{pix, t, d});
    seg.coeffs = slice(proj.coeffs, pix * d * ch, Shape{pix, d, ch});
    out.segments.push_back(std::move(seg));
  }
  return out;
}

}  // namespace pwtp
