#include <benchmark/benchmark.h>

#include <random>

#include "synthplankton/architectures.hpp"
#include "synthplankton/audit.hpp"
#include "synthplankton/dataset.hpp"
#include "synthplankton/metrics.hpp"

using namespace synthplankton;

namespace {

Eigen::MatrixXd random_rows(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  return x;
}

void BM_Conv2d(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  Rng rng(1);
  const Tensor x = Tensor::randn({8, c, 32, 32}, rng, 1.0);
  const Tensor w = Tensor::randn({c, c, 3, 3}, rng, 0.1);
  const Tensor b({c});
  for (auto _ : state) {
    Tape t;
    benchmark::DoNotOptimize(t.value(nn::conv2d(t, t.constant(x), t.constant(w), t.constant(b), 1, 1)).data());
  }
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_GeneratorForward(benchmark::State& state) {
  GeneratorSpec spec;
  spec.variant = static_cast<GeneratorVariant>(state.range(0));
  const Generator g = build_generator(spec, 1);
  const Tensor z = sample_latents(16, spec.latent_dim, 2);
  for (auto _ : state) benchmark::DoNotOptimize(generate(g, z).data.data());
}
BENCHMARK(BM_GeneratorForward)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_Fid(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const FeatureStats a = compute_stats(random_rows(2 * d, d, 1));
  const FeatureStats b = compute_stats(random_rows(2 * d, d, 2));
  for (auto _ : state) benchmark::DoNotOptimize(fid(a, b));
}
BENCHMARK(BM_Fid)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Kid(benchmark::State& state) {
  const Eigen::MatrixXd x = random_rows(1000, 64, 3);
  const Eigen::MatrixXd y = random_rows(1000, 64, 4);
  KidOptions o;
  o.subset_size = static_cast<std::size_t>(state.range(0));
  o.n_subsets = 10;
  for (auto _ : state) benchmark::DoNotOptimize(kid(x, y, o));
}
BENCHMARK(BM_Kid)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_PixelNeighbors(benchmark::State& state) {
  const ImageSet corpus = make_toy_data(static_cast<std::size_t>(state.range(0)), {32, 32}, 5);
  const ImageSet queries = make_toy_data(1, {32, 32}, 6);
  const NeighborIndex index(corpus, nullptr);
  for (auto _ : state) benchmark::DoNotOptimize(index.query(queries[0], NeighborSpace::pixel, 3));
}
BENCHMARK(BM_PixelNeighbors)->Arg(100)->Arg(1000)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
