// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "orthomerge/euclidean.hpp"
#include "orthomerge/manifold.hpp"

namespace orthomerge {

enum class DecoupleStrategy {
  kGlobal,         // Procrustes target is the full expert checkpoint
  kConflictAware,  // target keeps only columns whose update conflicts with the mean
};

using BoolArray = Eigen::Array<bool, Eigen::Dynamic, 1>;

struct TaskVector {
  Eigen::MatrixXd delta;                    // W_i - W_0
  std::optional<BoolArray> conflict_mask;   // per-column, conflict-aware only
  std::optional<Eigen::MatrixXd> residual;  // rho_i = W_i - R_i * W_0
};

struct TargetSet {
  std::vector<WeightMatrix> targets;
  std::vector<TaskVector> tasks;  // deltas (and masks when conflict-aware)
};

// Builds per-task Procrustes targets. GLOBAL copies the experts verbatim.
// CONFLICT_AWARE compares each column of tau_i = W_i - W_0 against the mean
// update: columns with cosine < 0 are conflicting and kept, the rest are
// zeroed; the target is W_0 plus the conflicting columns. The cosine against
// a zero vector is defined as 0 (never conflicting).
TargetSet build_targets(const WeightMatrix& base,
                        std::span<const WeightMatrix> experts,
                        DecoupleStrategy strategy);

struct Extraction {
  RotationMatrix rotation;
  TaskVector task;
  bool degenerate = false;  // Procrustes SVD was rank-deficient (flag only)
};

// Fits R_i to the target via special orthogonal Procrustes and computes the
// residual against the actual expert weights: rho_i = expert - R_i * base.
Extraction extract_rotation_and_residual(const WeightMatrix& base,
                                         const WeightMatrix& expert,
                                         const WeightMatrix& target,
                                         const Tolerances& tol = {});

struct HybridResult {
  WeightMatrix merged;
  std::optional<RotationMatrix> rotation;  // the merged rotation, always set
  MergeDiagnostics diagnostics;
};

// Full hybrid pipeline: targets, per-task rotation + residual extraction,
// magnitude-corrected rotation merge in the Lie algebra, Euclidean residual
// merge, recombination W = R_merged * W_0 + rho_merged. stream_label seeds
// the residual backend's random streams (DARE) per tensor.
HybridResult hybrid_merge(const WeightMatrix& base,
                          std::span<const WeightMatrix> experts,
                          DecoupleStrategy strategy,
                          const EuclideanMethod& residual_backend,
                          std::string_view stream_label = {},
                          const Tolerances& tol = {});

}  // namespace orthomerge
