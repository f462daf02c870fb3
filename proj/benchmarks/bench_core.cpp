// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "orthomerge/decouple.hpp"
#include "orthomerge/euclidean.hpp"
#include "orthomerge/manifold.hpp"
#include "orthomerge/rng.hpp"
#include "orthomerge/tensor_file.hpp"

using namespace orthomerge;

namespace {

SkewGenerator random_skew(Eigen::Index dim, uint64_t seed, double magnitude) {
  Rng rng = Rng::stream(seed, "bench", static_cast<uint64_t>(dim));
  SkewGenerator raw{Eigen::MatrixXd(rng.normal_matrix(dim, dim))};
  return SkewGenerator(Eigen::MatrixXd(raw.data() * (magnitude / raw.data().norm())));
}

void BM_Cayley(benchmark::State& state) {
  const auto dim = static_cast<Eigen::Index>(state.range(0));
  const SkewGenerator q = random_skew(dim, 1, 0.5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(cayley(q).data().data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Cayley)->Arg(32)->Arg(128)->Complexity();

void BM_InverseCayley(benchmark::State& state) {
  const auto dim = static_cast<Eigen::Index>(state.range(0));
  const RotationMatrix r = cayley(random_skew(dim, 2, 0.5));
  for (auto _ : state) {
    benchmark::DoNotOptimize(inverse_cayley(r).data().data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_InverseCayley)->Arg(32)->Arg(128)->Complexity();

void BM_Procrustes(benchmark::State& state) {
  const auto dim = static_cast<Eigen::Index>(state.range(0));
  Rng rng = Rng::stream(3, "bench", static_cast<uint64_t>(dim));
  const Eigen::MatrixXd base = rng.uniform_matrix(dim, 2 * dim);
  const Eigen::MatrixXd target =
      cayley(random_skew(dim, 4, 0.5)).data() * base;
  for (auto _ : state) {
    benchmark::DoNotOptimize(procrustes(target, base).rotation.data().data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Procrustes)->Arg(32)->Arg(128)->Complexity();

void BM_MagnitudeCorrectedMerge(benchmark::State& state) {
  const auto dim = static_cast<Eigen::Index>(state.range(0));
  std::vector<SkewGenerator> gens;
  for (uint64_t t = 0; t < 8; ++t) {
    gens.push_back(random_skew(dim, 10 + t, 0.5));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        magnitude_corrected_merge(gens).merged.data().data());
  }
}
BENCHMARK(BM_MagnitudeCorrectedMerge)->Arg(32)->Arg(128);

void BM_HybridMerge(benchmark::State& state) {
  const auto dim = static_cast<Eigen::Index>(state.range(0));
  Rng rng = Rng::stream(20, "bench", static_cast<uint64_t>(dim));
  const Eigen::MatrixXd base = rng.uniform_matrix(dim, 2 * dim);
  std::vector<Eigen::MatrixXd> experts;
  for (uint64_t t = 0; t < 4; ++t) {
    experts.emplace_back(cayley(random_skew(dim, 30 + t, 0.4)).data() * base);
  }
  EuclideanMethod ta;
  ta.kind = EuclideanKind::kTaskArithmetic;
  ta.lambda = 0.25;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        hybrid_merge(base, experts, DecoupleStrategy::kGlobal, ta, "bench")
            .merged.data());
  }
}
BENCHMARK(BM_HybridMerge)->Arg(32)->Arg(128);

void BM_TiesMerge(benchmark::State& state) {
  const auto dim = static_cast<Eigen::Index>(state.range(0));
  Rng rng = Rng::stream(40, "bench", static_cast<uint64_t>(dim));
  std::vector<Eigen::MatrixXd> deltas;
  for (int t = 0; t < 4; ++t) {
    deltas.emplace_back(rng.normal_matrix(dim, dim));
  }
  EuclideanMethod ties;
  ties.kind = EuclideanKind::kTies;
  ties.lambda = 0.25;
  for (auto _ : state) {
    benchmark::DoNotOptimize(euclidean_merge(deltas, ties, "bench").data());
  }
}
BENCHMARK(BM_TiesMerge)->Arg(32)->Arg(128);

void BM_DareMerge(benchmark::State& state) {
  const auto dim = static_cast<Eigen::Index>(state.range(0));
  Rng rng = Rng::stream(50, "bench", static_cast<uint64_t>(dim));
  std::vector<Eigen::MatrixXd> deltas;
  for (int t = 0; t < 4; ++t) {
    deltas.emplace_back(rng.normal_matrix(dim, dim));
  }
  EuclideanMethod dare;
  dare.kind = EuclideanKind::kDare;
  dare.lambda = 0.25;
  dare.dare_drop_prob = 0.9;
  for (auto _ : state) {
    benchmark::DoNotOptimize(euclidean_merge(deltas, dare, "bench").data());
  }
}
BENCHMARK(BM_DareMerge)->Arg(32)->Arg(128);

void BM_TensorFileRoundtrip(benchmark::State& state) {
  const auto dim = static_cast<Eigen::Index>(state.range(0));
  Rng rng = Rng::stream(60, "bench", static_cast<uint64_t>(dim));
  TensorFile file;
  for (int t = 0; t < 4; ++t) {
    file.tensors.emplace(
        "t" + std::to_string(t),
        TensorRecord::from_matrix(rng.uniform_matrix(dim, dim), Dtype::kF32));
  }
  const auto path = std::filesystem::temp_directory_path() /
                    ("orthomerge_bench_" + std::to_string(dim) + ".safetensors");
  for (auto _ : state) {
    store_tensor_file(path, file);
    benchmark::DoNotOptimize(load_tensor_file(path).tensors.size());
  }
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations()) * 4 * dim *
                          dim * 4 * 2);
  std::error_code ec;
  std::filesystem::remove(path, ec);
}
BENCHMARK(BM_TensorFileRoundtrip)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
