// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#include "orthomerge/decouple.hpp"

#include <fmt/format.h>

#include <utility>

#include "orthomerge/errors.hpp"

namespace orthomerge {
namespace {

void check_expert_shapes(const WeightMatrix& base,
                         std::span<const WeightMatrix> experts) {
  if (experts.empty()) {
    throw Error(ErrorCode::kEmptyInput, "no experts to merge");
  }
  for (size_t i = 0; i < experts.size(); ++i) {
    if (experts[i].rows() != base.rows() || experts[i].cols() != base.cols()) {
      throw Error(ErrorCode::kShapeMismatch,
                  fmt::format("expert {} has shape {}x{}, base is {}x{}", i,
                              experts[i].rows(), experts[i].cols(), base.rows(),
                              base.cols()));
    }
  }
}

}  // namespace

TargetSet build_targets(const WeightMatrix& base,
                        std::span<const WeightMatrix> experts,
                        DecoupleStrategy strategy) {
  check_expert_shapes(base, experts);
  TargetSet out;
  out.targets.reserve(experts.size());
  out.tasks.reserve(experts.size());
  for (const auto& expert : experts) {
    TaskVector tv;
    tv.delta = expert - base;
    out.tasks.push_back(std::move(tv));
  }
  if (strategy == DecoupleStrategy::kGlobal) {
    for (const auto& expert : experts) out.targets.push_back(expert);
    return out;
  }

  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(base.rows(), base.cols());
  for (const auto& task : out.tasks) mean += task.delta;
  mean /= static_cast<double>(experts.size());

  for (auto& task : out.tasks) {
    BoolArray mask(base.cols());
    Eigen::MatrixXd kept = Eigen::MatrixXd::Zero(base.rows(), base.cols());
    for (Eigen::Index j = 0; j < base.cols(); ++j) {
      const double denom = task.delta.col(j).norm() * mean.col(j).norm();
      const double cosine =
          denom == 0.0 ? 0.0 : task.delta.col(j).dot(mean.col(j)) / denom;
      mask(j) = cosine < 0.0;
      if (mask(j)) kept.col(j) = task.delta.col(j);
    }
    task.conflict_mask = std::move(mask);
    out.targets.push_back(base + kept);
  }
  return out;
}

Extraction extract_rotation_and_residual(const WeightMatrix& base,
                                         const WeightMatrix& expert,
                                         const WeightMatrix& target,
                                         const Tolerances& tol) {
  if (expert.rows() != base.rows() || expert.cols() != base.cols()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("expert is {}x{}, base is {}x{}", expert.rows(),
                            expert.cols(), base.rows(), base.cols()));
  }
  ProcrustesResult fit = procrustes(target, base, tol);
  TaskVector tv;
  tv.delta = expert - base;
  // The residual is always taken against the actual expert weights, even when
  // the target was a masked surrogate.
  tv.residual = expert - fit.rotation.data() * base;
  return {std::move(fit.rotation), std::move(tv), fit.degenerate};
}

HybridResult hybrid_merge(const WeightMatrix& base,
                          std::span<const WeightMatrix> experts,
                          DecoupleStrategy strategy,
                          const EuclideanMethod& residual_backend,
                          std::string_view stream_label, const Tolerances& tol) {
  TargetSet targets = build_targets(base, experts, strategy);

  std::vector<SkewGenerator> generators;
  std::vector<Eigen::MatrixXd> residuals;
  std::vector<int> degenerate_tasks;
  generators.reserve(experts.size());
  residuals.reserve(experts.size());
  for (size_t i = 0; i < experts.size(); ++i) {
    Extraction ex =
        extract_rotation_and_residual(base, experts[i], targets.targets[i], tol);
    generators.push_back(inverse_cayley(ex.rotation, tol));
    residuals.push_back(std::move(*ex.task.residual));
    if (ex.degenerate) degenerate_tasks.push_back(static_cast<int>(i));
  }

  GeneratorMergeResult gm = magnitude_corrected_merge(generators);
  const RotationMatrix merged_rotation = cayley(gm.merged, tol);
  const Eigen::MatrixXd merged_residual =
      euclidean_merge(residuals, residual_backend, stream_label);

  HybridResult out;
  out.merged = merged_rotation.data() * base + merged_residual;
  out.rotation = merged_rotation;
  out.diagnostics = std::move(gm.diagnostics);
  out.diagnostics.degenerate_tasks = std::move(degenerate_tasks);
  return out;
}

}  // namespace orthomerge
