#include "pwtp/recognizer.hpp"

#include <cmath>

#include "pwtp/ops.hpp"

namespace pwtp {

InputMode parse_input_mode(const std::string& text) {
  if (text == "da") return InputMode::da;
  if (text == "rgb" || text == "rgb_baseline") return InputMode::rgb_baseline;
  throw Error("unknown input mode '" + text + "' (expected da|rgb)");
}

std::string to_string(InputMode mode) { return mode == InputMode::da ? "da" : "rgb"; }

ParamSet head_param_shapes(std::size_t channels, std::size_t classes) {
  if (classes < 2) throw Error("head: need at least two classes");
  ParamSet p;
  p.insert("theta2/conv1/w", Tensor(Shape{3, 3, channels, kHeadWidth1}));
  p.insert("theta2/conv1/b", Tensor(Shape{kHeadWidth1}));
  p.insert("theta2/conv2/w", Tensor(Shape{3, 3, kHeadWidth1, kHeadWidth2}));
  p.insert("theta2/conv2/b", Tensor(Shape{kHeadWidth2}));
  p.insert("theta2/fc/w", Tensor(Shape{kHeadWidth2, classes}));
  p.insert("theta2/fc/b", Tensor(Shape{classes}));
  return p;
}

HeadParams init_head_params(std::size_t channels, std::size_t classes, Rng& rng) {
  HeadParams params{head_param_shapes(channels, classes)};
  for (auto& [name, t] : params.weights) {
    if (t.rank() == 1) continue;
    const std::size_t receptive = t.rank() == 4 ? t.dim(0) * t.dim(1) : 1;
    const std::size_t fan_in = receptive * t.dim(t.rank() - 2);
    const std::size_t fan_out = receptive * t.dim(t.rank() - 1);
    // He-uniform for the GELU convs, Glorot-uniform for the classifier.
    const double a = t.rank() == 4 ? std::sqrt(6.0 / static_cast<double>(fan_in))
                                   : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : t.data()) v = rng.uniform(-a, a);
  }
  return params;
}

ad::Var head_graph(const ad::Var& inputs, const VarMap& theta2) {
  const Shape& s = inputs.shape();
  if (s.size() != 5 || s[1] == 0) throw Error("head: expected N x S x H x W x C input, got " + shape_string(s));
  const std::size_t n = s[0], segs = s[1], h = s[2], w = s[3], c = s[4];
  const ad::Var& w1 = var(theta2, "theta2/conv1/w");
  if (w1.shape()[2] != c) throw Error("head: input has " + std::to_string(c) + " channels, head expects " +
                                      std::to_string(w1.shape()[2]));
  // Each segment is standardized first, so the head sees DA and RGB inputs at the same scale.
  ad::Var x = ad::standardize(ad::reshape(inputs, Shape{n * segs, h * w * c}), kHeadInputDelta);
  x = ad::reshape(x, Shape{n * segs, h, w, c});
  x = ad::gelu(ad::conv2d(x, w1, var(theta2, "theta2/conv1/b"), ad::ceil_geometry(h, w, 3, 1)));
  x = ad::gelu(ad::conv2d(x, var(theta2, "theta2/conv2/w"), var(theta2, "theta2/conv2/b"),
                          ad::ceil_geometry(h, w, 3, 2)));
  const Shape& fs = x.shape();
  x = ad::mean_axis(ad::reshape(x, Shape{fs[0], fs[1] * fs[2], fs[3]}), 1);
  x = ad::linear(x, var(theta2, "theta2/fc/w"), var(theta2, "theta2/fc/b"));
  const std::size_t k = x.shape()[1];
  return ad::consensus_mean(ad::reshape(x, Shape{n, segs, k}));
}

Tensor head_forward(const Tensor& inputs, const HeadParams& params) {
  if (inputs.rank() != 4) throw Error("head_forward: expected S x H x W x C input");
  const Shape& s = inputs.shape();
  ad::Tape tape;
  const VarMap theta2 = bind(tape, params.weights, false);
  const Tensor logits = head_graph(tape.constant(inputs.reshaped(Shape{1, s[0], s[1], s[2], s[3]})), theta2).value();
  return logits.reshaped(Shape{logits.dim(1)});
}

std::size_t predict(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

Tensor segment_mean_frames(const Tensor& clips) {
  if (clips.rank() != 5 && clips.rank() != 6) throw Error("segment_mean_frames: expected [N x] S x T x H x W x C");
  const std::size_t r = clips.rank();
  const std::size_t t = clips.dim(r - 4);
  const std::size_t plane = clips.dim(r - 3) * clips.dim(r - 2) * clips.dim(r - 1);
  const std::size_t blocks = clips.size() / (t * plane);
  Shape out_shape = clips.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(r - 4));
  Tensor out(out_shape, 0.0);
  for (std::size_t b = 0; b < blocks; ++b) {
    double* o = out.ptr() + b * plane;
    for (std::size_t tt = 0; tt < t; ++tt) {
      const double* x = clips.ptr() + (b * t + tt) * plane;
      for (std::size_t i = 0; i < plane; ++i) o[i] += x[i];
    }
    for (std::size_t i = 0; i < plane; ++i) o[i] /= static_cast<double>(t);
  }
  return out;
}

}  // namespace pwtp
