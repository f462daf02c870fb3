// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <vector>

#include "orthomerge/errors.hpp"

namespace orthomerge {

// Dense weight matrix of shape (d_in, d_out); columns are neurons.
using WeightMatrix = Eigen::MatrixXd;

// Validation tolerances for constructed matrices. All computation is 64-bit.
struct Tolerances {
  double ortho_tol = 1e-6;  // ||R^T R - I||_F bound
  double det_tol = 1e-6;    // |det(R) - 1| bound
  double skew_tol = 1e-10;  // ||Q + Q^T||_F bound after antisymmetrization
};

inline constexpr double kSingularRcond = 1e-12;     // LU solve guard
inline constexpr double kCayleyDomainSigma = 1e-8;  // sigma_min(R + I) guard
inline constexpr double kDegenerateSvdRatio = 1e-10;
inline constexpr double kZeroSumRatio = 1e-12;

// Square orthogonal matrix with det +1, optionally block-diagonal with
// uniform block size. Construction validates the invariants and throws
// INVALID_ARGUMENT / BAD_BLOCK_LAYOUT on violation.
class RotationMatrix {
 public:
  explicit RotationMatrix(Eigen::MatrixXd data,
                          std::optional<Eigen::Index> block_size = {},
                          const Tolerances& tol = {});

  static RotationMatrix identity(Eigen::Index dim,
                                 std::optional<Eigen::Index> block_size = {});

  const Eigen::MatrixXd& data() const { return data_; }
  Eigen::Index dim() const { return data_.rows(); }
  std::optional<Eigen::Index> block_size() const { return block_size_; }

 private:
  Eigen::MatrixXd data_;
  std::optional<Eigen::Index> block_size_;
};

// Skew-symmetric generator in so(d). The constructor antisymmetrizes the
// input (Q <- (Q - Q^T)/2), which makes skew-symmetry exact in floating
// point, then validates the optional block layout.
class SkewGenerator {
 public:
  explicit SkewGenerator(Eigen::MatrixXd data,
                         std::optional<Eigen::Index> block_size = {},
                         const Tolerances& tol = {});

  static SkewGenerator zero(Eigen::Index dim,
                            std::optional<Eigen::Index> block_size = {});

  const Eigen::MatrixXd& data() const { return data_; }
  Eigen::Index dim() const { return data_.rows(); }
  std::optional<Eigen::Index> block_size() const { return block_size_; }

 private:
  Eigen::MatrixXd data_;
  std::optional<Eigen::Index> block_size_;
};

// Measurements of one generator-space merge. correction_factor is empty when
// the merge hit the ZERO_SUM cancellation rule; block_factors mirror it per
// diagonal block when a block layout is present. Values describe the input
// generator set; only the magnitude-corrected strategy applies the factor.
struct MergeDiagnostics {
  std::vector<double> per_task_norms;
  double sum_norm = 0.0;
  std::optional<double> correction_factor = 1.0;
  double collapse_ratio = 1.0;
  std::vector<std::optional<double>> block_factors;
  std::vector<int> degenerate_tasks;  // tasks whose Procrustes SVD was rank-deficient
};

// Cayley transform R = (I + Q)(I - Q)^-1, applied per diagonal block.
// Throws SINGULAR_SOLVE if (I - Q) is numerically singular (impossible for
// an exactly skew Q; indicates corrupted input).
RotationMatrix cayley(const SkewGenerator& q, const Tolerances& tol = {});

// Inverse Cayley transform Q = (R - I)(R + I)^-1, antisymmetrized.
// Throws CAYLEY_DOMAIN when sigma_min(R + I) < 1e-8, i.e. R has an
// eigenvalue at -1 and lies outside the chart.
SkewGenerator inverse_cayley(const RotationMatrix& r, const Tolerances& tol = {});

struct ProcrustesResult {
  RotationMatrix rotation;
  // Smallest singular value of target * base^T below 1e-10 x largest: the
  // minimizer is not unique and the returned rotation is one tie-break.
  bool degenerate = false;
};

// Special orthogonal Procrustes: the rotation minimizing
// ||target - R * base||_F over SO(d_in), via SVD of target * base^T with the
// det(UV^T) = -1 case repaired by flipping the last left-singular column.
// A zero product matrix yields R = I (tie-break) with the degenerate flag.
ProcrustesResult procrustes(const WeightMatrix& target, const WeightMatrix& base,
                            const Tolerances& tol = {});

struct GeneratorMergeResult {
  SkewGenerator merged;
  MergeDiagnostics diagnostics;
};

// Magnitude-corrected generator mean: Q_merged = c * (1/N) * sum Q_i with
// c = (sum ||Q_i||_F) / ||sum Q_i||_F, computed per merged unit (per block
// when a block layout is present). When ||sum Q_i||_F < 1e-12 * max ||Q_i||_F
// the unit cancels to zero and the factor reports the ZERO_SUM sentinel.
GeneratorMergeResult magnitude_corrected_merge(std::span<const SkewGenerator> generators);

// Plain generator mean (1/N) * sum Q_i, no magnitude correction.
SkewGenerator mean_generator(std::span<const SkewGenerator> generators);

enum class OftStrategy {
  kOrthoMerge,    // inverse Cayley, magnitude-corrected mean, Cayley
  kSimpleAvgR,    // plain mean of rotation matrices (not orthogonal)
  kSeqProductR,   // ordered product R_{N-1} * ... * R_1 * R_0
  kSimpleAvgQ,    // plain generator mean, no magnitude correction
};

struct OftMergeResult {
  Eigen::MatrixXd matrix;                  // merged matrix, always set
  std::optional<RotationMatrix> rotation;  // engaged except for kSimpleAvgR
  MergeDiagnostics diagnostics;            // generator stats where computed
};

// Merge N rotations of identical shape and block layout with the chosen
// strategy. kSimpleAvgR returns a plain (generally non-orthogonal) matrix;
// every other strategy returns a valid RotationMatrix.
OftMergeResult merge_oft(std::span<const RotationMatrix> rotations,
                         OftStrategy strategy, const Tolerances& tol = {});

// Yields (offset, size) for each diagonal block; one full-span block when
// block_size is absent. Shared by every block-respecting kernel so that
// block-diagonal inputs are processed bit-for-bit like separate blocks.
template <typename Fn>
void for_each_block(Eigen::Index dim, std::optional<Eigen::Index> block_size,
                    Fn&& fn) {
  const Eigen::Index b = block_size.value_or(dim);
  for (Eigen::Index off = 0; off < dim; off += b) fn(off, b);
}

}  // namespace orthomerge
