// Serial reference vs OpenMP kernels. Run with OMP_NUM_THREADS set to the
// desired thread count.
#include <benchmark/benchmark.h>

#include <vector>

#include "mmcoref/kernels.hpp"
#include "mmcoref/random.hpp"

namespace {

using namespace mmcoref;

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

template <auto Kernel>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1);
  const auto b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    Kernel(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <auto Kernel>
void BM_softmax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_values(n * n, 3);
  std::vector<double> out(n * n);
  for (auto _ : state) {
    Kernel(x, {}, out, n, n);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

}  // namespace

BENCHMARK(BM_matmul<kernels::matmul_acc_serial>)->Name("matmul/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_matmul<kernels::matmul_acc_parallel>)->Name("matmul/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_matmul<kernels::matmul_bt_acc_serial>)->Name("matmul_bt/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_matmul<kernels::matmul_bt_acc_parallel>)->Name("matmul_bt/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_softmax<kernels::softmax_rows_serial>)->Name("softmax/serial")->RangeMultiplier(2)->Range(32, 512);
BENCHMARK(BM_softmax<kernels::softmax_rows_parallel>)->Name("softmax/parallel")->RangeMultiplier(2)->Range(32, 512);

BENCHMARK_MAIN();
