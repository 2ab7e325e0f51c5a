// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#include <benchmark/benchmark.h>

#include "duolab/cosim.hpp"
#include "duolab/grad_probe.hpp"

namespace {

using namespace duolab;

void BM_matmul_reference(benchmark::State& st) {
  Rng rng(1);
  const auto n = static_cast<std::size_t>(st.range(0));
  const Matrix a = gaussian_matrix(rng, n, n), b = gaussian_matrix(rng, n, n);
  for (auto _ : st) benchmark::DoNotOptimize(reference::matmul(a, b));
}
BENCHMARK(BM_matmul_reference)->Arg(64)->Arg(256);

void BM_matmul(benchmark::State& st) {
  Rng rng(1);
  const auto n = static_cast<std::size_t>(st.range(0));
  const Matrix a = gaussian_matrix(rng, n, n), b = gaussian_matrix(rng, n, n);
  for (auto _ : st) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(256);

CosimSetup small_setup(std::size_t samples) {
  CosimConfig cfg;
  cfg.width = 16;
  cfg.samples = samples;
  cfg.activation = ActivationSpec::quantized(3);
  return CosimSetup::build(cfg);
}

void BM_network_cdg_reference(benchmark::State& st) {
  const CosimSetup s = small_setup(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(reference::network_cdg(s.model, s.inputs, s.targets, 1e-3));
}
BENCHMARK(BM_network_cdg_reference)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_network_cdg(benchmark::State& st) {
  const CosimSetup s = small_setup(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(network_cdg(s.model, s.inputs, s.targets, 1e-3, 0));
}
BENCHMARK(BM_network_cdg)->Arg(200)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_esg(benchmark::State& st) {
  const CosimSetup s = small_setup(200);
  for (auto _ : st) benchmark::DoNotOptimize(cosim_esg(s, 1e-2, static_cast<std::size_t>(st.range(0))));
}
BENCHMARK(BM_esg)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
