// Serial reference vs OpenMP kernels on synthetic inputs.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "cwb/kernels.hpp"

namespace {

using namespace cwb::kernels;

std::vector<double> uniform(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <bool Parallel>
void BM_Gram(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(n, 12);
  const auto w = uniform(static_cast<std::size_t>(n), 1);
  const auto r = uniform(static_cast<std::size_t>(n), 2);
  for (auto _ : state) {
    auto g = Parallel ? parallel::weighted_gram(x, w, r) : serial::weighted_gram(x, w, r);
    benchmark::DoNotOptimize(g.xtwx.data());
  }
}

template <bool Parallel>
void BM_Nearest(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto v = uniform(n, 3);
  std::vector<std::uint8_t> avail(n, 1);
  std::vector<std::int64_t> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = static_cast<std::int64_t>(i);
  const double inf = std::numeric_limits<double>::infinity();
  for (auto _ : state) {
    auto b = Parallel ? parallel::nearest_scalar(0.5, v, avail, keys, inf) : serial::nearest_scalar(0.5, v, avail, keys, inf);
    benchmark::DoNotOptimize(b.index);
  }
}

template <bool Parallel>
void BM_Bootstrap(benchmark::State& state) {
  const auto v = uniform(static_cast<std::size_t>(state.range(0)), 4);
  for (auto _ : state) {
    auto m = Parallel ? parallel::bootstrap_means(v, 1000, 42) : serial::bootstrap_means(v, 1000, 42);
    benchmark::DoNotOptimize(m.data());
  }
}

template <bool Parallel>
void BM_Kde(benchmark::State& state) {
  const auto v = uniform(static_cast<std::size_t>(state.range(0)), 5);
  std::vector<double> grid(128);
  for (std::size_t g = 0; g < grid.size(); ++g) grid[g] = static_cast<double>(g) / 127.0;
  for (auto _ : state) {
    auto d = Parallel ? parallel::gaussian_kde(v, 0.05, grid) : serial::gaussian_kde(v, 0.05, grid);
    benchmark::DoNotOptimize(d.data());
  }
}

}  // namespace

BENCHMARK(BM_Gram<false>)->Arg(20000)->Arg(200000);
BENCHMARK(BM_Gram<true>)->Arg(20000)->Arg(200000);
BENCHMARK(BM_Nearest<false>)->Arg(100000)->Arg(1000000);
BENCHMARK(BM_Nearest<true>)->Arg(100000)->Arg(1000000);
BENCHMARK(BM_Bootstrap<false>)->Arg(1000)->Arg(10000);
BENCHMARK(BM_Bootstrap<true>)->Arg(1000)->Arg(10000);
BENCHMARK(BM_Kde<false>)->Arg(10000);
BENCHMARK(BM_Kde<true>)->Arg(10000);

BENCHMARK_MAIN();
