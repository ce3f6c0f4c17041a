// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

// Serial reference kernels against their OpenMP counterparts, plus the model
// passes that dominate training time.

#include <benchmark/benchmark.h>

#include "sieve/numerics.hpp"
#include "sieve/rng.hpp"
#include "sieve/toy_vlm.hpp"

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  sieve::RngStream rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.next_normal();
  return v;
}

template <auto Kernel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 64, m = 256;
  auto a = random_values(n * k, 1);
  auto b = random_values(k * m, 2);
  std::vector<double> c(n * m);
  for (auto _ : state) {
    Kernel(a, b, c, n, k, m, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * n * k * m));
}
BENCHMARK(BM_Gemm<sieve::numerics::serial::gemm>)->Name("gemm/serial")->Arg(16)->Arg(128)->Arg(512);
BENCHMARK(BM_Gemm<sieve::numerics::gemm>)->Name("gemm/omp")->Arg(16)->Arg(128)->Arg(512);

template <auto Kernel>
void BM_GemmBt(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 256, m = 64;
  auto a = random_values(n * k, 1);
  auto b = random_values(m * k, 2);
  std::vector<double> c(n * m);
  for (auto _ : state) {
    Kernel(a, b, c, n, k, m, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * n * k * m));
}
BENCHMARK(BM_GemmBt<sieve::numerics::serial::gemm_bt>)->Name("gemm_bt/serial")->Arg(128);
BENCHMARK(BM_GemmBt<sieve::numerics::gemm_bt>)->Name("gemm_bt/omp")->Arg(128);

void BM_Forward(benchmark::State& state) {
  const sieve::vlm::Model model = sieve::vlm::build_model({});
  sieve::Matrix x(static_cast<std::size_t>(state.range(0)), 64);
  auto v = random_values(x.size(), 3);
  std::copy(v.begin(), v.end(), x.values().begin());
  for (auto _ : state) benchmark::DoNotOptimize(sieve::vlm::forward(model, x).logits.data());
}
BENCHMARK(BM_Forward)->Arg(72)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_GradScalarLogit(benchmark::State& state) {
  const sieve::vlm::Model model = sieve::vlm::build_model({});
  sieve::Matrix x(static_cast<std::size_t>(state.range(0)), 64);
  auto v = random_values(x.size(), 3);
  std::copy(v.begin(), v.end(), x.values().begin());
  for (auto _ : state) benchmark::DoNotOptimize(sieve::vlm::grad_scalar_logit(model, x, 5).grads.values().data());
}
BENCHMARK(BM_GradScalarLogit)->Arg(72)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
