#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "pwtp/datagen.hpp"
#include "pwtp/training.hpp"

using namespace pwtp;

namespace {

struct Small {
  PwtpConfig pwtp;
  SynthSpec data;
  TrainConfig train;
  Small() {
    pwtp.frames = 4;
    pwtp.kernel = 3;
    pwtp.stride = 2;
    pwtp.agg_channels = 4;
    data.height = data.width = 8;
    data.frames = 4;
    data.segments = 2;
    data.square = 3;
    data.n_train = 8;
    data.n_test = 8;
    data.seed = 5;
    train.steps = 12;
    train.batch = 4;
    train.warmup_steps = 3;
    train.seed = 2;
  }
};

std::vector<std::size_t> labels_of(const std::vector<LabeledClip>& clips) {
  std::vector<std::size_t> out;
  for (const auto& c : clips) out.push_back(c.label);
  return out;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.warmup_steps = 100;
  const std::size_t steps = 2000;
  CHECK(learning_rate(cfg, 0, steps) == doctest::Approx(0.05 / 100.0).epsilon(1e-15));
  CHECK(learning_rate(cfg, 49, steps) == doctest::Approx(0.05 * 0.5).epsilon(1e-15));
  CHECK(learning_rate(cfg, 99, steps) == doctest::Approx(0.05).epsilon(1e-15));
  for (std::size_t t : {100u, 500u, 1000u, 1999u}) {
    const double want = 0.05 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / 2000.0));
    CHECK(learning_rate(cfg, t, steps) == doctest::Approx(want).epsilon(1e-14));
  }
  CHECK(learning_rate(cfg, 1000, steps) == doctest::Approx(0.025).epsilon(1e-14));
  cfg.warmup_steps = 0;
  CHECK(learning_rate(cfg, 0, steps) == 0.05);
}

TEST_CASE("global norm clipping") {
  ParamSet g;
  g.insert("a", Tensor(Shape{1}, 3.0));
  g.insert("b", Tensor(Shape{1}, 4.0));
  ParamSet h = g;
  CHECK(clip_global_norm(g, 2.5) == 5.0);
  CHECK(g.get("a")[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(g.get("b")[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(clip_global_norm(h, 20.0) == 5.0);
  CHECK(h.get("a")[0] == 3.0);
  CHECK(clip_global_norm(h, 0.0) == 5.0);
  CHECK(h.get("b")[0] == 4.0);
}

TEST_CASE("momentum SGD by hand") {
  ParamSet p;
  p.insert("x/w", Tensor(Shape{1}, 1.0));
  p.insert("x/b", Tensor(Shape{1}, 1.0));
  SgdMomentum opt(0.9, 0.1);
  ParamSet g;
  g.insert("x/w", Tensor(Shape{1}, 2.0));
  g.insert("x/b", Tensor(Shape{1}, 2.0));
  opt.step(p, g, 0.5);
  // v = 2 + 0.1 * 1 for the weight, 2 for the bias
  CHECK(p.get("x/w")[0] == doctest::Approx(1.0 - 0.5 * 2.1).epsilon(1e-15));
  CHECK(p.get("x/b")[0] == doctest::Approx(0.0).epsilon(1e-15));
  opt.step(p, g, 0.5);
  const double w1 = 1.0 - 0.5 * 2.1;
  CHECK(p.get("x/w")[0] == doctest::Approx(w1 - 0.5 * (0.9 * 2.1 + 2.0 + 0.1 * w1)).epsilon(1e-14));
  CHECK(p.get("x/b")[0] == doctest::Approx(-0.5 * 3.8).epsilon(1e-14));

  ParamSet stray;
  stray.insert("y/w", Tensor(Shape{1}, 1.0));
  CHECK_THROWS_AS(opt.step(p, stray, 0.1), Error);
}

TEST_CASE("batch sampler") {
  BatchSampler a(10, 5, 3), b(10, 5, 3);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::set<std::size_t> seen;
    for (int i = 0; i < 2; ++i) {
      const auto x = a.next();
      CHECK(x == b.next());
      CHECK(x.size() == 5);
      seen.insert(x.begin(), x.end());
    }
    CHECK(seen.size() == 10);
  }
  BatchSampler small(3, 8, 1);
  CHECK(small.next().size() == 3);
  CHECK_THROWS_AS(BatchSampler(0, 1, 1), Error);
}

TEST_CASE("gather") {
  Tensor t(Shape{3, 2}, std::vector<double>{0, 1, 2, 3, 4, 5});
  const std::size_t idx[] = {2, 0, 2};
  const Tensor g = gather(t, idx);
  CHECK(g.shape() == Shape{3, 2});
  CHECK(g == Tensor(Shape{3, 2}, std::vector<double>{4, 5, 0, 1, 4, 5}));
  const std::size_t bad[] = {3};
  CHECK_THROWS_AS(gather(t, bad), Error);
}

TEST_CASE("unsupervised training reduces ENoPR and is reproducible") {
  Small s;
  const Dataset d = make_dataset(s.data);
  const Tensor clips = stack_clips(d.train);
  const UnsupResult a = train_unsupervised(clips, s.pwtp, s.train);
  const UnsupResult b = train_unsupervised(clips, s.pwtp, s.train);
  REQUIRE(a.log.size() == s.train.steps);
  CHECK(a.log.front().step == 0);
  CHECK(a.log.back().enopr < a.log.front().enopr);
  CHECK(a.params.weights == b.params.weights);
  CHECK(a.params.running == b.params.running);
  CHECK(a.log.back().enopr == b.log.back().enopr);
  CHECK(std::isfinite(dataset_enopr(clips, a.params, s.pwtp)));
}

TEST_CASE("joint training modes") {
  Small s;
  const Dataset d = make_dataset(s.data);
  const Tensor clips = stack_clips(d.train);
  const auto labels = labels_of(d.train);

  SUBCASE("constant zero") {
    JointConfig j;
    j.mode = JointMode::constant(0.0);
    const JointResult r = train_joint(clips, labels, 4, s.pwtp, s.train, j);
    REQUIRE(r.log.size() == s.train.steps);
    for (const auto& row : r.log) {
      CHECK(row.alpha == 0.0);
      CHECK(std::isfinite(row.enopr));
      CHECK(std::isfinite(row.loss2));
    }
  }
  SUBCASE("mgda is reproducible and alpha stays in range") {
    const JointResult a = train_joint(clips, labels, 4, s.pwtp, s.train, {});
    const JointResult b = train_joint(clips, labels, 4, s.pwtp, s.train, {});
    CHECK(a.theta1.weights == b.theta1.weights);
    CHECK(a.theta2.weights == b.theta2.weights);
    for (std::size_t i = 0; i < a.log.size(); ++i) {
      CHECK(a.log[i].alpha >= 0.0);
      CHECK(a.log[i].alpha <= 1.0);
      CHECK(a.log[i].loss2 == b.log[i].loss2);
    }
  }
  SUBCASE("rgb baseline never runs the projector") {
    JointConfig j;
    j.input = InputMode::rgb_baseline;
    const JointResult r = train_joint(clips, labels, 4, s.pwtp, s.train, j);
    for (const auto& row : r.log) {
      CHECK(std::isnan(row.enopr));
      CHECK(std::isnan(row.alpha));
    }
  }
  SUBCASE("separate mode pretrains, then trains only the head") {
    JointConfig j;
    j.mode = JointMode::separate();
    j.pretrain_steps = 5;
    const JointResult r = train_joint(clips, labels, 4, s.pwtp, s.train, j);
    REQUIRE(r.log.size() == s.train.steps);
    for (std::size_t i = 0; i < r.log.size(); ++i) CHECK(r.log[i].alpha == (i < 5 ? 1.0 : 0.0));
  }
  SUBCASE("label out of range") {
    auto bad = labels;
    bad[0] = 4;
    CHECK_THROWS_AS(train_joint(clips, bad, 4, s.pwtp, s.train, {}), Error);
  }
}

TEST_CASE("checkpoint layout") {
  Small s;
  Rng rng(1);
  const PwtpParams t1 = init_pwtp_params(s.pwtp, 3, rng);
  const HeadParams t2 = init_head_params(3, 4, rng);
  const ParamSet all = checkpoint_params(t1, &t2);
  CHECK(all.size() == t1.weights.size() + t1.running.size() + t2.weights.size());
  for (const auto& [name, t] : all) CHECK((name.rfind("theta1/", 0) == 0 || name.rfind("theta2/", 0) == 0));
  const PwtpParams back = load_theta1(all, s.pwtp, 3);
  CHECK(back.weights == t1.weights);
  CHECK(back.running == t1.running);
  CHECK(load_theta2(all, 3, 4).weights == t2.weights);
  CHECK_THROWS_AS(load_theta2(all, 3, 5), Error);
}
