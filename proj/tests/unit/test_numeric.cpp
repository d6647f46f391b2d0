#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "pwtp/autodiff.hpp"
#include "pwtp/gradcheck.hpp"
#include "pwtp/linalg.hpp"
#include "pwtp/ops.hpp"
#include "pwtp/param_set.hpp"
#include "pwtp/rng.hpp"
#include "pwtp/tensor.hpp"

using namespace pwtp;

namespace {

// Random SPD matrix B^T B + d I.
Tensor random_spd(Rng& rng, std::size_t d) {
  std::vector<double> b(d * d);
  for (auto& v : b) v = rng.uniform(-1.0, 1.0);
  Tensor m(Shape{d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = i == j ? static_cast<double>(d) * 0.1 : 0.0;
      for (std::size_t k = 0; k < d; ++k) s += b[k * d + i] * b[k * d + j];
      m[i * d + j] = s;
    }
  return m;
}

}  // namespace

TEST_CASE("tensor shape invariants") {
  Tensor t(Shape{2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.at({1, 2}) == 1.5);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>(3)), Error);
  CHECK_THROWS_AS(t.at({2, 0}), Error);
  CHECK_THROWS_AS(t.reshaped(Shape{4}), Error);
  CHECK(t.reshaped(Shape{3, 2}).shape() == Shape{3, 2});
}

TEST_CASE("spd_solve_batch small cases") {
  SUBCASE("identity") {
    Tensor m(Shape{1, 2, 2}, std::vector<double>{1, 0, 0, 1});
    Tensor r(Shape{1, 2, 1}, std::vector<double>{2, 4});
    const Tensor z = spd_solve_batch(m, r, 0.0);
    CHECK(z[0] == 2.0);
    CHECK(z[1] == 4.0);
  }
  SUBCASE("diagonal") {
    Tensor m(Shape{1, 2, 2}, std::vector<double>{2, 0, 0, 4});
    Tensor r(Shape{1, 2, 1}, std::vector<double>{2, 4});
    const Tensor z = spd_solve_batch(m, r, 0.0);
    CHECK(z[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(z[1] == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("singular pivot names the batch index") {
    Tensor m(Shape{3, 1, 1}, std::vector<double>{1.0, 2.0, 0.0});
    Tensor r(Shape{3, 1, 1}, 1.0);
    try {
      spd_solve_batch(m, r, 0.0);
      FAIL("expected a singular basis error");
    } catch (const SingularBasisError& e) {
      CHECK(e.index() == 2);
      CHECK(std::string(e.what()).find("singular basis") != std::string::npos);
    }
    // ridge rescues it
    CHECK(spd_solve_batch(m, r, 1e-3)[2] == doctest::Approx(1000.0));
  }
}

TEST_CASE("spd_solve_batch matches Gaussian elimination on random SPD systems") {
  Rng rng(11);
  const std::size_t batch = 100, d = 3, c = 2;
  Tensor mats(Shape{batch, d, d}), rhs(Shape{batch, d, c});
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor m = random_spd(rng, d);
    std::copy(m.data().begin(), m.data().end(), mats.ptr() + b * d * d);
  }
  for (auto& v : rhs.data()) v = rng.uniform(-2.0, 2.0);
  const double ridge = 1e-3;
  const Tensor z = spd_solve_batch(mats, rhs, ridge);
  for (std::size_t b = 0; b < batch; ++b) {
    oracle::Matrix a(d, std::vector<double>(d)), r(d, std::vector<double>(c));
    double rhs_inf = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) a[i][j] = mats[(b * d + i) * d + j] + (i == j ? ridge : 0.0);
      for (std::size_t k = 0; k < c; ++k) {
        r[i][k] = rhs[(b * d + i) * c + k];
        rhs_inf = std::max(rhs_inf, std::abs(r[i][k]));
      }
    }
    const oracle::Matrix want = oracle::gauss_solve(a, r);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        const double got = z[(b * d + i) * c + k];
        CHECK(std::abs(got - want[i][k]) <= 1e-10 * std::max(1.0, std::abs(want[i][k])));
      }
    // residual bound
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += a[i][j] * z[(b * d + j) * c + k];
        CHECK(std::abs(s - r[i][k]) <= 1e-9 * rhs_inf);
      }
  }
}

TEST_CASE("SplitMix64 stream") {
  // First output of SplitMix64 from state 0, computed by hand from the update rule.
  std::uint64_t z = 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  CHECK(z == 0xE220A8397B1DCDAFULL);

  Rng rng(0);
  CHECK(rng.next_u64() == 0xE220A8397B1DCDAFULL);

  Rng a(0);
  const auto first = rng_uniform(a, 1);
  REQUIRE(first.size() == 1);
  CHECK(first[0] == static_cast<double>(0xE220A8397B1DCDAFULL >> 11) * 0x1.0p-53);
  CHECK(first[0] == 0.8833108082136426);

  Rng b(5);
  const auto before = b.state();
  CHECK(rng_uniform(b, 0).empty());
  CHECK(b.state() == before);

  Rng c1(42), c2(42);
  const auto s1 = rng_uniform(c1, 1000), s2 = rng_uniform(c2, 1000);
  CHECK(s1 == s2);
  for (double v : s1) {
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
}

TEST_CASE("grad_check on closed-form objectives") {
  ParamSet p;
  p.insert("w", Tensor(Shape{5}, 1.0));
  SUBCASE("linear") {
    const Objective f = [](const ParamSet& ps, ParamSet* g) {
      double s = 0.0;
      const Tensor& w = ps.get("w");
      for (std::size_t i = 0; i < w.size(); ++i) s += static_cast<double>(i + 1) * w[i];
      if (g) {
        Tensor gw(w.shape());
        for (std::size_t i = 0; i < w.size(); ++i) gw[i] = static_cast<double>(i + 1);
        g->set("w", gw);
      }
      return s;
    };
    // exact differences, only rounding of f (~eps*|f|/h) remains
    CHECK(grad_check(f, p, 1e-5) <= 1e-9);
  }
  SUBCASE("sum of squares") {
    const Objective f = [](const ParamSet& ps, ParamSet* g) {
      double s = 0.0;
      const Tensor& w = ps.get("w");
      for (double v : w.data()) s += v * v;
      if (g) {
        Tensor gw(w.shape());
        for (std::size_t i = 0; i < w.size(); ++i) gw[i] = 2.0 * w[i];
        g->set("w", gw);
      }
      return s;
    };
    CHECK(grad_check(f, p, 1e-5) <= 1e-9);
  }
  SUBCASE("wrong gradient is caught") {
    const Objective f = [](const ParamSet& ps, ParamSet* g) {
      double s = 0.0;
      for (double v : ps.get("w").data()) s += v * v;
      if (g) g->set("w", Tensor(Shape{5}, 1.0));
      return s;
    };
    CHECK(grad_check(f, p, 1e-5) > 0.5);
  }
  SUBCASE("non-finite objective") {
    const Objective f = [](const ParamSet&, ParamSet* g) {
      if (g) g->set("w", Tensor(Shape{5}, 0.0));
      return std::nan("");
    };
    CHECK_THROWS_WITH_AS(grad_check(f, p, 1e-5), doctest::Contains("objective not finite"), Error);
  }
}

TEST_CASE("gradient accumulation does not depend on contribution order") {
  Rng rng(3);
  Tensor x0(Shape{4, 6});
  for (auto& v : x0.data()) v = rng.uniform(-1.0, 1.0);
  std::vector<double> weights(7);
  for (auto& w : weights) w = rng.uniform(-2.0, 2.0);

  const auto run = [&](bool reversed) {
    ad::Tape tape;
    ad::Var x = tape.leaf(x0);
    std::vector<ad::Var> terms;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      const std::size_t k = reversed ? weights.size() - 1 - i : i;
      terms.push_back(ad::sum_squares(ad::gelu(ad::scale(x, weights[k]))));
    }
    ad::Var total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
    tape.backward(total);
    return x.grad();
  };
  const Tensor a = run(false), b = run(true);
  CHECK(max_abs_diff(a, b) <= 1e-12);
}

TEST_CASE("backward visits a shared node once and zeroes between passes") {
  ad::Tape tape;
  ad::Var x = tape.leaf(Tensor(Shape{1}, 3.0));
  ad::Var y = ad::add(x, x);
  ad::Var z = ad::sum_squares(y);  // (2x)^2, dz/dx = 8x
  tape.backward(z);
  CHECK(x.grad()[0] == 24.0);
  tape.backward(z);
  CHECK(x.grad()[0] == 24.0);
  ad::Var two = tape.leaf(Tensor(Shape{2}, 1.0));
  CHECK_THROWS_AS(tape.backward(two), Error);
}

TEST_CASE("standardize backward matches finite differences") {
  Rng rng(9);
  ParamSet p;
  Tensor x(Shape{3, 10});
  for (auto& v : x.data()) v = rng.uniform(-0.02, 0.02);
  p.insert("x", x);
  Tensor target(Shape{3, 10});
  for (auto& v : target.data()) v = rng.uniform(-1.0, 1.0);
  const Objective f = [&](const ParamSet& ps, ParamSet* g) {
    ad::Tape tape;
    ad::Var xv = tape.leaf(ps.get("x"));
    ad::Var y = ad::standardize(xv, 1e-6);
    ad::Var loss = ad::sum_squares(ad::sub(y, tape.constant(target)));
    if (g) {
      tape.backward(loss);
      g->set("x", xv.grad());
    }
    return loss.value().item();
  };
  CHECK(grad_check(f, p, 1e-7) < 1e-5);
}
