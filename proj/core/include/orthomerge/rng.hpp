// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string_view>

namespace orthomerge {

// Deterministic, portable random streams.
//
// Reproducibility across platforms matters for DARE masks and synthetic
// fixtures, so this wrapper avoids std::*_distribution (whose output is
// implementation-defined) and draws doubles directly from the raw
// std::mt19937_64 sequence, which the standard pins bit-for-bit.
//
// Stream splitting: a stream is identified by (seed, label, index). The
// triple is mixed with splitmix64 and FNV-1a so independent streams can be
// drawn in any order, e.g. one stream per (tensor name, task index).

uint64_t splitmix64(uint64_t& state);
uint64_t fnv1a64(std::string_view text);
uint64_t mix_seed(uint64_t seed, uint64_t salt);

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  static Rng stream(uint64_t seed, std::string_view label, uint64_t index) {
    return Rng(mix_seed(mix_seed(seed, fnv1a64(label)), index));
  }

  uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller on the portable uniforms.
  double normal();

  Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols,
                                 double lo = -1.0, double hi = 1.0);
  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);
  Eigen::VectorXd uniform_vector(Eigen::Index size, double lo = -1.0,
                                 double hi = 1.0);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace orthomerge
