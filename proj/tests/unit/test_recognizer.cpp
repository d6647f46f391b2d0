#include <doctest.h>

#include <algorithm>
#include <vector>

#include "pwtp/gradcheck.hpp"
#include "pwtp/ops.hpp"
#include "pwtp/recognizer.hpp"
#include "pwtp/training.hpp"

using namespace pwtp;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform();
  return t;
}

Tensor segment(const Tensor& inputs, std::size_t s) {
  const std::size_t n = inputs.size() / inputs.dim(0);
  Tensor out(Shape{1, inputs.dim(1), inputs.dim(2), inputs.dim(3)});
  std::copy(inputs.ptr() + s * n, inputs.ptr() + (s + 1) * n, out.ptr());
  return out;
}

}  // namespace

TEST_CASE("zero head gives zero logits") {
  HeadParams p{head_param_shapes(3, 4)};
  Rng rng(1);
  const Tensor logits = head_forward(random_tensor(Shape{2, 8, 8, 3}, rng), p);
  CHECK(logits.shape() == Shape{4});
  CHECK(max_abs(logits) == 0.0);
}

TEST_CASE("head parameter count") {
  // conv1 3*3*3*16 + 16, conv2 3*3*16*32 + 32, fc 32*4 + 4
  CHECK(head_param_shapes(3, 4).numel() == 448 + 4640 + 132);
}

TEST_CASE("segment consensus") {
  Rng rng(2);
  const HeadParams p = init_head_params(3, 4, rng);
  const Tensor x = random_tensor(Shape{4, 8, 8, 3}, rng);
  const Tensor base = head_forward(x, p);

  SUBCASE("permutation invariance is bitwise") {
    const std::size_t order[] = {2, 0, 3, 1};
    Tensor y(x.shape());
    const std::size_t n = x.size() / 4;
    for (std::size_t s = 0; s < 4; ++s) std::copy(x.ptr() + order[s] * n, x.ptr() + (order[s] + 1) * n, y.ptr() + s * n);
    CHECK(head_forward(y, p) == base);
  }
  SUBCASE("duplicated segment matches a single one") {
    const Tensor one = segment(x, 1);
    Tensor four(Shape{4, 8, 8, 3});
    for (std::size_t s = 0; s < 4; ++s) std::copy(one.data().begin(), one.data().end(), four.ptr() + s * one.size());
    const Tensor a = head_forward(one, p), b = head_forward(four, p);
    // 4x is exact, dividing by 4 is exact, so only the sum 3x can round.
    CHECK(max_abs_diff(a, b) <= 1e-15 * std::max(1.0, max_abs(a)));
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(head_forward(Tensor(Shape{4, 8, 8, 2}), p), Error);
    CHECK_THROWS_AS(head_forward(Tensor(Shape{8, 8, 3}), p), Error);
  }
}

TEST_CASE("predict") {
  CHECK(predict(std::vector<double>{0.1, 0.9}) == 1);
  CHECK(predict(std::vector<double>{0.5, 0.5}) == 0);
  CHECK(predict(std::vector<double>{-1.0, 3.0, 3.0, 2.0}) == 1);
  std::vector<double> z{0.3, -0.2, 0.7, 0.1};
  const std::size_t k = predict(z);
  for (auto& v : z) v += 123.25;
  CHECK(predict(z) == k);
}

TEST_CASE("input modes") {
  CHECK(parse_input_mode("da") == InputMode::da);
  CHECK(parse_input_mode("rgb") == InputMode::rgb_baseline);
  CHECK(to_string(InputMode::rgb_baseline) == "rgb");
  CHECK_THROWS_AS(parse_input_mode("flow"), Error);

  Tensor clip(Shape{2, 2, 1, 1, 1}, std::vector<double>{1.0, 3.0, -2.0, 4.0});
  const Tensor m = segment_mean_frames(clip);
  CHECK(m.shape() == Shape{2, 1, 1, 1});
  CHECK(m[0] == 2.0);
  CHECK(m[1] == 1.0);
}

TEST_CASE("head gradients match finite differences") {
  Rng rng(3);
  const HeadParams p = init_head_params(3, 4, rng);
  const Tensor x = random_tensor(Shape{2, 2, 6, 6, 3}, rng);
  const std::vector<std::size_t> labels{1, 3};
  const Objective f = [&](const ParamSet& ps, ParamSet* g) {
    ad::Tape tape;
    const VarMap vars = bind(tape, ps);
    ad::Var loss = ad::softmax_cross_entropy(head_graph(tape.constant(x), vars), labels, 0.1);
    if (g) {
      tape.backward(loss);
      *g = gradients(vars);
    }
    return loss.value().item();
  };
  CHECK(grad_check(f, p.weights, 1e-6) < 1e-4);
}

TEST_CASE("end-to-end gradient through the projector") {
  PwtpConfig cfg;
  cfg.frames = 4;
  cfg.kernel = 3;
  cfg.stride = 2;
  cfg.agg_channels = 4;
  Rng rng(4);
  const PwtpParams theta1 = init_pwtp_params(cfg, 3, rng);
  const HeadParams theta2 = init_head_params(3, 4, rng);
  const Tensor clips = random_tensor(Shape{2, 2, 4, 8, 8, 3}, rng);
  ParamSet joint = theta1.weights;
  joint.merge(theta2.weights);
  const Objective f = recognition_objective(clips, {0, 2}, cfg, theta1.running, 0.1);
  CHECK(grad_check(f, joint, 1e-6) < 1e-4);
}
