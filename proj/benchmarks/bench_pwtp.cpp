#include <benchmark/benchmark.h>

#include "pwtp/datagen.hpp"
#include "pwtp/objectives.hpp"
#include "pwtp/ops.hpp"
#include "pwtp/pwtp.hpp"
#include "pwtp/runtime.hpp"
#include "pwtp/training.hpp"

using namespace pwtp;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Batched least-squares projection, 32x32 pixels, T = 8, rank from the argument.
void BM_Project(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor x = random_tensor(Shape{8, 32, 32, 3}, rng, 0.0, 1.0);
  const Tensor a = random_tensor(Shape{32 * 32, 8, d}, rng, -1.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(project(x, a, 1e-6));
}
BENCHMARK(BM_Project)->Arg(1)->Arg(3);

void BM_Conv2d(benchmark::State& state) {
  Rng rng(2);
  const Tensor x = random_tensor(Shape{4, 32, 32, 24}, rng, -1.0, 1.0);
  const Tensor w = random_tensor(Shape{5, 5, 24, 16}, rng, -0.1, 0.1);
  const ad::ConvGeometry geo = ad::ceil_geometry(32, 32, 5, 3);
  for (auto _ : state) {
    ad::Tape tape;
    benchmark::DoNotOptimize(ad::conv2d(tape.constant(x), tape.constant(w), std::nullopt, geo).value());
  }
}
BENCHMARK(BM_Conv2d);

// Inference on one default clip (4 segments of 8 frames at 32x32).
void BM_PwtpForward(benchmark::State& state) {
  SynthSpec spec;
  spec.n_train = 4;
  spec.n_test = 4;
  const Dataset ds = make_dataset(spec);
  Rng rng(3);
  const PwtpParams params = init_pwtp_params(PwtpConfig{}, kChannels, rng);
  for (auto _ : state) benchmark::DoNotOptimize(pwtp_forward(ds.train[0].clip, params, PwtpConfig{}, NormMode::running));
}
BENCHMARK(BM_PwtpForward)->Unit(benchmark::kMillisecond);

// Forward plus backward of the ENoPR objective on a batch of 8 segments.
void BM_EnoprGradient(benchmark::State& state) {
  SynthSpec spec;
  spec.n_train = 4;
  spec.n_test = 4;
  const Dataset ds = make_dataset(spec);
  const Tensor clips = stack_clips(ds.train);
  const Shape& s = clips.shape();
  const Tensor segments = gather(clips.reshaped(Shape{s[0] * s[1], s[2], s[3], s[4], s[5]}),
                                 std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
  Rng rng(4);
  const PwtpParams params = init_pwtp_params(PwtpConfig{}, kChannels, rng);
  const Objective f = enopr_objective(segments, PwtpConfig{}, params.running);
  ParamSet grad = params.weights;
  for (auto _ : state) benchmark::DoNotOptimize(f(params.weights, &grad));
}
BENCHMARK(BM_EnoprGradient)->Unit(benchmark::kMillisecond);

void BM_MgdaAlpha(benchmark::State& state) {
  Rng rng(5);
  std::vector<double> g1(static_cast<std::size_t>(state.range(0))), g2(g1.size());
  for (auto& v : g1) v = rng.uniform(-1.0, 1.0);
  for (auto& v : g2) v = rng.uniform(-1.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(mgda_alpha(g1, g2));
}
BENCHMARK(BM_MgdaAlpha)->Arg(10000);

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
