// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#include "orthomerge/manifold.hpp"

#include <fmt/format.h>

#include <cmath>
#include <utility>

namespace orthomerge {
namespace {

void check_block_layout(const Eigen::MatrixXd& m,
                        std::optional<Eigen::Index> block_size,
                        const char* what) {
  if (m.rows() != m.cols()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("{} must be square, got {}x{}", what, m.rows(), m.cols()));
  }
  if (!block_size) return;
  const Eigen::Index b = *block_size;
  if (b < 1 || m.rows() % b != 0) {
    throw Error(ErrorCode::kBadBlockLayout,
                fmt::format("block size {} does not divide dimension {}", b, m.rows()));
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (i / b != j / b && m(i, j) != 0.0) {
        throw Error(ErrorCode::kBadBlockLayout,
                    fmt::format("{} has nonzero entry ({}, {}) outside diagonal blocks of size {}",
                                what, i, j, b));
      }
    }
  }
}

void check_same_layout(std::span<const Eigen::MatrixXd* const> mats,
                       std::span<const std::optional<Eigen::Index>> blocks,
                       const char* what) {
  for (size_t i = 1; i < mats.size(); ++i) {
    if (mats[i]->rows() != mats[0]->rows() || mats[i]->cols() != mats[0]->cols()) {
      throw Error(ErrorCode::kShapeMismatch,
                  fmt::format("{} {} has shape {}x{}, expected {}x{}", what, i,
                              mats[i]->rows(), mats[i]->cols(), mats[0]->rows(),
                              mats[0]->cols()));
    }
    if (blocks[i] != blocks[0]) {
      throw Error(ErrorCode::kBadBlockLayout,
                  fmt::format("{} {} has a different block layout", what, i));
    }
  }
}

Eigen::MatrixXd cayley_kernel(const Eigen::MatrixXd& q) {
  const Eigen::Index d = q.rows();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(eye - q);
  if (lu.rcond() < kSingularRcond) {
    throw Error(ErrorCode::kSingularSolve,
                "(I - Q) is numerically singular; generator is not skew-symmetric");
  }
  // (I + Q)(I - Q)^-1 == (I - Q)^-1 (I + Q): rational functions of the same
  // matrix commute, so one LU solve suffices.
  return lu.solve(eye + q);
}

Eigen::MatrixXd inverse_cayley_kernel(const Eigen::MatrixXd& r) {
  const Eigen::Index d = r.rows();
  const Eigen::MatrixXd shifted = r + Eigen::MatrixXd::Identity(d, d);
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(shifted);
  if (svd.singularValues().minCoeff() < kCayleyDomainSigma) {
    throw Error(ErrorCode::kCayleyDomain,
                fmt::format("rotation has an eigenvalue at -1 (sigma_min(R + I) = {:.3e}); "
                            "outside the Cayley chart",
                            svd.singularValues().minCoeff()));
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(shifted);
  return lu.solve(r - Eigen::MatrixXd::Identity(d, d));
}

struct UnitMerge {
  Eigen::MatrixXd merged;
  std::optional<double> factor;  // empty = ZERO_SUM cancellation
};

// Magnitude-corrected mean of one merged unit (a full matrix or one block).
UnitMerge merge_unit(std::span<const Eigen::MatrixXd> blocks) {
  const auto n = static_cast<double>(blocks.size());
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(blocks[0].rows(), blocks[0].cols());
  double total_norm = 0.0;
  double max_norm = 0.0;
  for (const auto& b : blocks) {
    sum += b;
    const double nb = b.norm();
    total_norm += nb;
    max_norm = std::max(max_norm, nb);
  }
  const double sum_norm = sum.norm();
  if (max_norm == 0.0) {
    // Every generator is exactly zero; the mean is zero and the correction is
    // the identical-inputs limit c = 1.
    return {Eigen::MatrixXd::Zero(sum.rows(), sum.cols()), 1.0};
  }
  if (sum_norm < kZeroSumRatio * max_norm) {
    return {Eigen::MatrixXd::Zero(sum.rows(), sum.cols()), std::nullopt};
  }
  const double c = total_norm / sum_norm;
  return {(c / n) * sum, c};
}

}  // namespace

RotationMatrix::RotationMatrix(Eigen::MatrixXd data,
                               std::optional<Eigen::Index> block_size,
                               const Tolerances& tol)
    : data_(std::move(data)), block_size_(block_size) {
  check_block_layout(data_, block_size_, "rotation");
  const Eigen::Index d = data_.rows();
  const double ortho_defect =
      (data_.transpose() * data_ - Eigen::MatrixXd::Identity(d, d)).norm();
  if (!(ortho_defect <= tol.ortho_tol)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("matrix is not orthogonal: ||R^T R - I||_F = {:.3e} > {:.1e}",
                            ortho_defect, tol.ortho_tol));
  }
  const double det = data_.partialPivLu().determinant();
  if (!(std::abs(det - 1.0) <= tol.det_tol)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("matrix is not special orthogonal: det = {:.12g}", det));
  }
}

RotationMatrix RotationMatrix::identity(Eigen::Index dim,
                                        std::optional<Eigen::Index> block_size) {
  return RotationMatrix(Eigen::MatrixXd::Identity(dim, dim), block_size);
}

SkewGenerator::SkewGenerator(Eigen::MatrixXd data,
                             std::optional<Eigen::Index> block_size,
                             const Tolerances& tol)
    : data_(std::move(data)), block_size_(block_size) {
  if (data_.rows() != data_.cols()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("generator must be square, got {}x{}", data_.rows(),
                            data_.cols()));
  }
  data_ = 0.5 * (data_ - data_.transpose()).eval();
  check_block_layout(data_, block_size_, "generator");
  // Antisymmetrization is exact in IEEE arithmetic; the residual check guards
  // against NaN and overflow propagation only.
  const double skew_defect = (data_ + data_.transpose()).norm();
  if (!(skew_defect <= tol.skew_tol)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("generator is not skew-symmetric after antisymmetrization "
                            "(||Q + Q^T||_F = {:.3e})",
                            skew_defect));
  }
}

SkewGenerator SkewGenerator::zero(Eigen::Index dim,
                                  std::optional<Eigen::Index> block_size) {
  return SkewGenerator(Eigen::MatrixXd::Zero(dim, dim), block_size);
}

RotationMatrix cayley(const SkewGenerator& q, const Tolerances& tol) {
  const Eigen::Index d = q.dim();
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(d, d);
  for_each_block(d, q.block_size(), [&](Eigen::Index off, Eigen::Index b) {
    r.block(off, off, b, b) = cayley_kernel(q.data().block(off, off, b, b));
  });
  return RotationMatrix(std::move(r), q.block_size(), tol);
}

SkewGenerator inverse_cayley(const RotationMatrix& r, const Tolerances& tol) {
  const Eigen::Index d = r.dim();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(d, d);
  for_each_block(d, r.block_size(), [&](Eigen::Index off, Eigen::Index b) {
    q.block(off, off, b, b) = inverse_cayley_kernel(r.data().block(off, off, b, b));
  });
  return SkewGenerator(std::move(q), r.block_size(), tol);
}

ProcrustesResult procrustes(const WeightMatrix& target, const WeightMatrix& base,
                            const Tolerances& tol) {
  if (target.rows() != base.rows() || target.cols() != base.cols()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("target is {}x{} but base is {}x{}", target.rows(),
                            target.cols(), base.rows(), base.cols()));
  }
  if (target.rows() < 1) {
    throw Error(ErrorCode::kEmptyInput, "empty weight matrix");
  }
  const Eigen::Index d = target.rows();
  const Eigen::MatrixXd product = target * base.transpose();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      product, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sigma = svd.singularValues();
  const bool degenerate = sigma(0) <= 0.0 || sigma(d - 1) < kDegenerateSvdRatio * sigma(0);
  if (sigma(0) <= 0.0) {
    return {RotationMatrix::identity(d), true};
  }
  Eigen::MatrixXd u = svd.matrixU();
  const double det_uv = u.determinant() * svd.matrixV().determinant();
  if (det_uv < 0.0) {
    u.col(d - 1) *= -1.0;
  }
  return {RotationMatrix(u * svd.matrixV().transpose(), std::nullopt, tol), degenerate};
}

GeneratorMergeResult magnitude_corrected_merge(std::span<const SkewGenerator> generators) {
  if (generators.empty()) {
    throw Error(ErrorCode::kEmptyInput, "no generators to merge");
  }
  std::vector<const Eigen::MatrixXd*> mats;
  std::vector<std::optional<Eigen::Index>> blocks;
  for (const auto& g : generators) {
    mats.push_back(&g.data());
    blocks.push_back(g.block_size());
  }
  check_same_layout(mats, blocks, "generator");

  const Eigen::Index d = generators[0].dim();
  const auto block_size = generators[0].block_size();
  MergeDiagnostics diag;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(d, d);
  double total_norm = 0.0;
  double max_norm = 0.0;
  for (const auto& g : generators) {
    sum += g.data();
    const double n = g.data().norm();
    diag.per_task_norms.push_back(n);
    total_norm += n;
    max_norm = std::max(max_norm, n);
  }
  diag.sum_norm = sum.norm();
  if (max_norm == 0.0) {
    diag.correction_factor = 1.0;
    diag.collapse_ratio = 1.0;
  } else if (diag.sum_norm < kZeroSumRatio * max_norm) {
    diag.correction_factor = std::nullopt;
    diag.collapse_ratio = diag.sum_norm / total_norm;
  } else {
    diag.correction_factor = total_norm / diag.sum_norm;
    diag.collapse_ratio = diag.sum_norm / total_norm;
  }

  // The merged matrix is assembled per unit so block-diagonal inputs match a
  // blockwise run bit-for-bit; the correction factor is per unit as well.
  Eigen::MatrixXd merged = Eigen::MatrixXd::Zero(d, d);
  for_each_block(d, block_size, [&](Eigen::Index off, Eigen::Index b) {
    std::vector<Eigen::MatrixXd> unit;
    unit.reserve(generators.size());
    for (const auto& g : generators) unit.push_back(g.data().block(off, off, b, b));
    UnitMerge um = merge_unit(unit);
    merged.block(off, off, b, b) = um.merged;
    if (block_size) diag.block_factors.push_back(um.factor);
  });
  return {SkewGenerator(std::move(merged), block_size), std::move(diag)};
}

SkewGenerator mean_generator(std::span<const SkewGenerator> generators) {
  if (generators.empty()) {
    throw Error(ErrorCode::kEmptyInput, "no generators to average");
  }
  std::vector<const Eigen::MatrixXd*> mats;
  std::vector<std::optional<Eigen::Index>> blocks;
  for (const auto& g : generators) {
    mats.push_back(&g.data());
    blocks.push_back(g.block_size());
  }
  check_same_layout(mats, blocks, "generator");
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(generators[0].dim(), generators[0].dim());
  for (const auto& g : generators) sum += g.data();
  return SkewGenerator(sum / static_cast<double>(generators.size()),
                       generators[0].block_size());
}

OftMergeResult merge_oft(std::span<const RotationMatrix> rotations,
                         OftStrategy strategy, const Tolerances& tol) {
  if (rotations.empty()) {
    throw Error(ErrorCode::kEmptyInput, "no rotations to merge");
  }
  std::vector<const Eigen::MatrixXd*> mats;
  std::vector<std::optional<Eigen::Index>> blocks;
  for (const auto& r : rotations) {
    mats.push_back(&r.data());
    blocks.push_back(r.block_size());
  }
  check_same_layout(mats, blocks, "rotation");

  const Eigen::Index d = rotations[0].dim();
  const auto block_size = rotations[0].block_size();

  switch (strategy) {
    case OftStrategy::kSimpleAvgR: {
      Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(d, d);
      for (const auto& r : rotations) sum += r.data();
      OftMergeResult out;
      out.matrix = sum / static_cast<double>(rotations.size());
      return out;
    }
    case OftStrategy::kSeqProductR: {
      Eigen::MatrixXd prod = Eigen::MatrixXd::Zero(d, d);
      for_each_block(d, block_size, [&](Eigen::Index off, Eigen::Index b) {
        Eigen::MatrixXd acc = rotations[0].data().block(off, off, b, b);
        for (size_t i = 1; i < rotations.size(); ++i) {
          acc = (rotations[i].data().block(off, off, b, b) * acc).eval();
        }
        prod.block(off, off, b, b) = acc;
      });
      OftMergeResult out;
      out.rotation = RotationMatrix(std::move(prod), block_size, tol);
      out.matrix = out.rotation->data();
      return out;
    }
    case OftStrategy::kSimpleAvgQ:
    case OftStrategy::kOrthoMerge: {
      std::vector<SkewGenerator> gens;
      gens.reserve(rotations.size());
      for (const auto& r : rotations) gens.push_back(inverse_cayley(r, tol));
      GeneratorMergeResult gm = magnitude_corrected_merge(gens);
      OftMergeResult out;
      out.diagnostics = std::move(gm.diagnostics);
      const SkewGenerator q = strategy == OftStrategy::kOrthoMerge
                                  ? std::move(gm.merged)
                                  : mean_generator(gens);
      out.rotation = cayley(q, tol);
      out.matrix = out.rotation->data();
      return out;
    }
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown merge strategy");
}

}  // namespace orthomerge
