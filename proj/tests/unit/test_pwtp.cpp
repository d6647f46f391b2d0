#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "pwtp/linalg.hpp"
#include "pwtp/ops.hpp"
#include "pwtp/pwtp.hpp"

using namespace pwtp;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

PwtpParams shaped_params(const PwtpConfig& cfg, std::size_t channels) {
  PwtpParams p;
  p.weights = pwtp_param_shapes(cfg, channels);
  const std::size_t f = cfg.hidden_width();
  for (std::size_t j = 0; j < cfg.mlp.blocks; ++j) {
    const std::string b = "theta1/mlp/block" + std::to_string(j) + "/norm/";
    p.running.insert(b + "running_mean", Tensor(Shape{f}, 0.0));
    p.running.insert(b + "running_var", Tensor(Shape{f}, 1.0));
  }
  return p;
}

// Bases that ignore the input: fc_out weights zeroed, bias = polynomial basis.
PwtpParams constant_basis_params(const PwtpConfig& cfg, std::size_t channels, std::uint64_t seed) {
  Rng rng(seed);
  PwtpParams p = init_pwtp_params(cfg, channels, rng);
  p.weights.get("theta1/mlp/fc_out/w").fill(0.0);
  return p;
}

}  // namespace

TEST_CASE("config invariants") {
  PwtpConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.frames == 8);
  CHECK(cfg.rank == 1);
  CHECK(cfg.kernel == 9);
  CHECK(cfg.stride == 8);
  CHECK(cfg.agg_channels == 24);
  CHECK(cfg.mlp.expansion == 2.0);
  CHECK(cfg.mlp.bottleneck == 0.25);
  CHECK(cfg.mlp.blocks == 1);
  PwtpConfig bad = cfg;
  bad.rank = 5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.kernel = 4;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.frames = 1;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("parameter counts of the MLP variants") {
  // Hand count for C = 3: conv 9*9*3*24 = 5832; fc_in 28*F + F; per block
  // 2F (affine) + F*Fb + Fb + Fb*F + F; fc_out F*8 + 8.
  PwtpConfig cfg;
  CHECK(pwtp_param_shapes(cfg, 3).numel() == 9662);
  cfg.mlp.expansion = 1.0;
  CHECK(pwtp_param_shapes(cfg, 3).numel() == 7359);

  // Published thousands, one decimal: (beta, B, r) -> count.
  struct Row {
    double beta;
    std::size_t blocks;
    double r;
    double thousands;
  };
  const Row rows[] = {{0.25, 1, 1, 7.4}, {0.25, 2, 4, 23.3}, {1.0, 1, 4, 35.5}, {0.25, 0, 4, 10.0}, {0.25, 1, 2, 9.7}};
  for (const auto& row : rows) {
    PwtpConfig c;
    c.mlp = {row.r, row.beta, row.blocks};
    const double k = static_cast<double>(pwtp_param_shapes(c, 3).numel()) / 1000.0;
    CAPTURE(row.thousands);
    CHECK(std::abs(k - row.thousands) <= 0.05);
  }
}

TEST_CASE("aggregate_conv") {
  Rng rng(1);
  SUBCASE("identity kernel") {
    PwtpConfig cfg;
    cfg.frames = 4;
    cfg.rank = 1;
    cfg.kernel = 1;
    cfg.stride = 1;
    cfg.agg_channels = 3;
    PwtpParams p = shaped_params(cfg, 3);
    Tensor& w = p.weights.get("theta1/conv/w");
    for (std::size_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
    const Tensor x = random_tensor(Shape{4, 5, 6, 3}, rng);
    CHECK(aggregate_conv(x, p, cfg) == x);
  }
  SUBCASE("zero kernel and default geometry") {
    PwtpConfig cfg;
    PwtpParams p = shaped_params(cfg, 3);
    const Tensor x = random_tensor(Shape{8, 32, 32, 3}, rng);
    const Tensor y = aggregate_conv(x, p, cfg);
    CHECK(y.shape() == Shape{8, 4, 4, 24});
    CHECK(max_abs(y) == 0.0);
  }
  SUBCASE("clip too small") {
    PwtpConfig cfg;
    PwtpParams p = shaped_params(cfg, 3);
    CHECK_THROWS_WITH_AS(aggregate_conv(Tensor(Shape{8, 8, 32, 3}), p, cfg), doctest::Contains("clip too small"),
                         Error);
  }
}

TEST_CASE("padding geometry") {
  auto g = ad::ceil_geometry(32, 32, 9, 8);
  CHECK(g.out_h == 4);
  CHECK(g.pad_top == 0);  // total pad 1, floor half on top
  g = ad::ceil_geometry(33, 33, 9, 8);
  CHECK(g.out_h == 5);
  CHECK(g.pad_top == 4);
  g = ad::ceil_geometry(10, 12, 3, 2);
  CHECK(g.out_h == 5);
  CHECK(g.out_w == 6);
  CHECK(g.pad_left == 0);
  g = ad::ceil_geometry(8, 8, 3, 1);
  CHECK(g.out_h == 8);
  CHECK(g.pad_top == 1);
}

TEST_CASE("temporal_descriptors") {
  SUBCASE("scalar frames") {
    Tensor x(Shape{3, 1, 1, 1}, std::vector<double>{1, 2, 3});
    const Tensor u = temporal_descriptors(x);
    CHECK(u.shape() == Shape{1, 3});
    CHECK(u[0] == 2.0);
    CHECK(u[1] == 3.0);
    CHECK(u[2] == 6.0);
  }
  SUBCASE("constant clip") {
    Tensor x(Shape{5, 2, 2, 4});
    const double v[4] = {0.5, -1.0, 2.0, 0.25};
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = v[i % 4];
    const Tensor u = temporal_descriptors(x);
    const double want = (0.25 + 1.0 + 4.0 + 0.0625) / 4.0;
    for (double e : u.data()) CHECK(e == doctest::Approx(want).epsilon(1e-15));
  }
  SUBCASE("length") {
    CHECK(temporal_descriptors(Tensor(Shape{8, 2, 2, 3})).shape() == Shape{4, 28});
  }
}

TEST_CASE("generate_bases") {
  PwtpConfig cfg;
  Rng rng(2);
  const PwtpParams p = init_pwtp_params(cfg, 3, rng);
  const Tensor u = random_tensor(Shape{16, 28}, rng);
  const Tensor a = generate_bases(u, p, cfg, 32, 32);
  CHECK(a.shape() == Shape{1024, 8, 1});

  // Identity resize when the grid already has the target size.
  Tensor grid = random_tensor(Shape{2, 3, 4, 5}, rng);
  ad::Tape tape;
  CHECK(ad::upsample_bilinear(tape.constant(grid), 3, 4).value() == grid);
}

TEST_CASE("initial bases have full column rank") {
  for (std::size_t d : {1u, 3u}) {
    PwtpConfig cfg;
    cfg.rank = d;
    Rng rng(40 + d);
    const PwtpParams p = init_pwtp_params(cfg, 3, rng);
    const Tensor clip = random_tensor(Shape{1, 8, 32, 32, 3}, rng);
    const PwtpResult r = pwtp_forward(clip, p, cfg, NormMode::batch);
    const Tensor& a = r.segments[0].bases;
    for (std::size_t i = 0; i < 1024; ++i) {
      oracle::Matrix m(8, std::vector<double>(d));
      for (std::size_t t = 0; t < 8; ++t)
        for (std::size_t j = 0; j < d; ++j) m[t][j] = a[(i * 8 + t) * d + j];
      CHECK(oracle::rank(m) == d);
    }
  }
}

TEST_CASE("polynomial basis is orthonormal and starts with the constant column") {
  const Tensor q = polynomial_basis(8, 3);
  for (std::size_t t = 0; t < 8; ++t) CHECK(q[t * 3] == doctest::Approx(1.0 / std::sqrt(8.0)).epsilon(1e-15));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < 8; ++t) s += q[t * 3 + i] * q[t * 3 + j];
      CHECK(s == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-14));
    }
}

TEST_CASE("project small cases") {
  SUBCASE("all-ones basis is the temporal mean") {
    Tensor x(Shape{2, 1, 1, 1}, std::vector<double>{3, 5});
    Tensor a(Shape{1, 2, 1}, std::vector<double>{1, 1});
    const Projection pr = project(x, a, 0.0);
    // Cholesky round-off only.
    const double tol = 1e-14;
    CHECK(std::abs(pr.static_part[0] - 4.0) <= tol);
    CHECK(std::abs(pr.static_part[1] - 4.0) <= tol);
    const ResidualSplit rs = residual_and_da(x, pr.static_part);
    CHECK(std::abs(rs.residual[0] + 1.0) <= tol);
    CHECK(std::abs(rs.residual[1] - 1.0) <= tol);
    CHECK(std::abs(rs.da[0]) <= tol);
  }
  SUBCASE("axis basis") {
    Tensor x(Shape{2, 1, 1, 1}, std::vector<double>{3, 5});
    Tensor a(Shape{1, 2, 1}, std::vector<double>{1, 0});
    const Projection pr = project(x, a, 0.0);
    CHECK(pr.static_part[0] == 3.0);
    CHECK(pr.static_part[1] == 0.0);
  }
  SUBCASE("singular basis names the pixel") {
    Tensor x(Shape{2, 1, 3, 1}, 1.0);
    Tensor a(Shape{3, 2, 1}, std::vector<double>{1, 1, 1, 0, 0, 0});
    try {
      project(x, a, 0.0);
      FAIL("expected a singular basis error");
    } catch (const SingularBasisError& e) {
      CHECK(e.index() == 2);
    }
  }
}

TEST_CASE("project matches the normal-equations oracle") {
  Rng rng(5);
  const std::size_t t = 8, d = 3, h = 3, w = 4, c = 2;
  const Tensor x = random_tensor(Shape{t, h, w, c}, rng);
  const Tensor a = random_tensor(Shape{h * w, t, d}, rng, -1.0, 1.0);
  for (double ridge : {0.0, 1e-6}) {
    const Projection pr = project(x, a, ridge);
    for (std::size_t i = 0; i < h * w; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::vector<double> fiber(t);
        for (std::size_t f = 0; f < t; ++f) fiber[f] = x[(f * h * w + i) * c + ch];
        const auto want =
            oracle::project(std::span<const double>(a.ptr() + i * t * d, t * d), t, d, fiber, ridge);
        for (std::size_t f = 0; f < t; ++f) {
          const double got = pr.static_part[(f * h * w + i) * c + ch];
          CHECK(std::abs(got - want[f]) <= 1e-10 * std::max(1.0, std::abs(want[f])));
        }
      }
  }
}

TEST_CASE("residual_and_da") {
  Rng rng(6);
  const Tensor x = random_tensor(Shape{4, 2, 2, 3}, rng);
  const ResidualSplit same = residual_and_da(x, x);
  CHECK(max_abs(same.residual) == 0.0);
  CHECK(max_abs(same.da) == 0.0);
  Tensor p(Shape{2, 1, 1, 1}, std::vector<double>{1.0, -1.0});
  CHECK(residual_and_da(p, Tensor(Shape{2, 1, 1, 1})).da[0] == 0.0);
  CHECK_THROWS_AS(residual_and_da(x, Tensor(Shape{4, 2, 2, 2})), Error);
}

TEST_CASE("pwtp_forward") {
  PwtpConfig cfg;
  Rng rng(7);
  SUBCASE("static clip with a constant basis has no dynamic appearance") {
    cfg.ridge = 0.0;
    const PwtpParams p = constant_basis_params(cfg, 3, 8);
    Tensor clip(Shape{1, 8, 32, 32, 3});
    const Tensor frame = random_tensor(Shape{32 * 32 * 3}, rng);
    for (std::size_t t = 0; t < 8; ++t)
      std::copy(frame.data().begin(), frame.data().end(), clip.ptr() + t * frame.size());
    const PwtpResult r = pwtp_forward(clip, p, cfg);
    CHECK(max_abs(r.da) <= 1e-15);
  }
  SUBCASE("segments, decomposition and determinism") {
    const PwtpParams p = init_pwtp_params(cfg, 3, rng);
    const Tensor clip = random_tensor(Shape{4, 8, 32, 32, 3}, rng);
    const PwtpResult r = pwtp_forward(clip, p, cfg);
    CHECK(r.da.shape() == Shape{4, 32, 32, 3});
    REQUIRE(r.segments.size() == 4);
    const std::size_t seg = 8 * 32 * 32 * 3;
    for (std::size_t s = 0; s < 4; ++s) {
      const auto& d = r.segments[s];
      for (std::size_t i = 0; i < seg; ++i) {
        const double x = clip[s * seg + i];
        CHECK(d.residual[i] == x - d.static_part[i]);
        CHECK(std::abs((d.static_part[i] + d.residual[i]) - x) <= std::abs(x) * 0x1p-52);
      }
    }
    const PwtpResult again = pwtp_forward(clip, p, cfg);
    CHECK(again.da == r.da);
    CHECK(again.segments[2].coeffs == r.segments[2].coeffs);
  }
}

TEST_CASE("batch-mode statistics are per segment") {
  PwtpConfig cfg;
  Rng rng(12);
  const PwtpParams p = init_pwtp_params(cfg, 3, rng);
  const Tensor a = random_tensor(Shape{1, 8, 32, 32, 3}, rng);
  const Tensor b = random_tensor(Shape{1, 8, 32, 32, 3}, rng);
  Tensor both(Shape{2, 8, 32, 32, 3});
  std::copy(a.data().begin(), a.data().end(), both.ptr());
  std::copy(b.data().begin(), b.data().end(), both.ptr() + a.size());
  const PwtpResult alone = pwtp_forward(a, p, cfg, NormMode::batch);
  const PwtpResult paired = pwtp_forward(both, p, cfg, NormMode::batch);
  CHECK(max_abs_diff(alone.segments[0].da, paired.segments[0].da) == 0.0);
}
