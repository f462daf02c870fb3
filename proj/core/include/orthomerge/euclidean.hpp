// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string_view>

namespace orthomerge {

enum class EuclideanKind {
  kTaskArithmetic,  // lambda * sum of deltas
  kTies,            // trim / elect sign / disjoint mean, then lambda
  kDare,            // random drop + 1/(1-p) rescale, then task arithmetic
  kSimpleAverage,   // plain mean of deltas
};

struct EuclideanMethod {
  EuclideanKind kind = EuclideanKind::kTaskArithmetic;
  double lambda = 1.0;              // > 0; 1/N is conventional on residuals
  double ties_keep_fraction = 0.2;  // (0, 1]; fraction of entries kept by |value|
  double dare_drop_prob = 0.9;      // [0, 1)
  uint64_t seed = 0;                // DARE mask seed
};

// Merge N task deltas of identical shape in weight space.
//
// TIES (frozen semantics): per task keep the top ceil(keep_fraction * numel)
// entries by absolute value (ties broken by lower linear index), zero the
// rest; elect the per-entry sign of the sum of trimmed values with ties
// toward +; output lambda times the mean of trimmed entries whose sign
// matches the election, over matching tasks only (0 when none match).
//
// DARE: each entry of task i is dropped with probability p and survivors are
// rescaled by 1/(1-p); the rescaled deltas are combined by task arithmetic.
// Masks come from the portable stream (seed, stream_label, task_index), so
// results are bit-reproducible and independent of execution order; entries
// are visited in column-major order.
//
// Throws EMPTY_INPUT, SHAPE_MISMATCH, INVALID_ARGUMENT (bad hyperparameters).
Eigen::MatrixXd euclidean_merge(std::span<const Eigen::MatrixXd> deltas,
                                const EuclideanMethod& method,
                                std::string_view stream_label = {});

}  // namespace orthomerge
