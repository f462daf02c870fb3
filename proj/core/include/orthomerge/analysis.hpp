// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "orthomerge/decouple.hpp"
#include "orthomerge/manifold.hpp"

namespace orthomerge {

struct EnergyResult {
  double value = 0.0;       // +inf when duplicate columns are present
  int zero_columns = 0;     // excluded from the sum
  int duplicate_pairs = 0;  // DUPLICATE_COLUMNS diagnostic count
};

// Hyperspherical energy sum_{i != j} ||w_i_hat - w_j_hat||^-s over ordered
// pairs of unit-normalized columns. Zero columns are excluded with a count;
// coincident normalized columns (distance < 1e-12) make the energy +inf.
// Requires at least two nonzero columns.
EnergyResult hyperspherical_energy(const WeightMatrix& w, double s = 2.0);

struct SpectralResult {
  double value = 0.0;
  int iterations = 0;
  bool converged = true;  // false = NO_CONVERGENCE flag, value is best estimate
};

// Largest singular value by power iteration on W^T W with a seeded start
// vector; converged when the estimate moves by <= rel_tol relatively.
SpectralResult spectral_norm(const WeightMatrix& w, double rel_tol = 1e-9,
                             int max_iterations = 10000, uint64_t seed = 0);

struct NormRow {
  std::string checkpoint;  // expert label
  std::string tensor;
  int layer = -1;          // parsed from the tensor name, -1 when absent
  std::string module_tag;
  double full_norm = 0.0;      // ||tau_i||_F
  double ortho_norm = 0.0;     // ||R_i W_0 - W_0||_F
  double residual_norm = 0.0;  // ||rho_i||_F
};

// Splits each expert's update on one tensor into rotational and residual
// parts and reports the Frobenius norms, one row per (tensor, task).
std::vector<NormRow> norm_report_rows(const std::string& tensor_name,
                                      const WeightMatrix& base,
                                      std::span<const WeightMatrix> experts,
                                      std::span<const std::string> labels,
                                      DecoupleStrategy strategy,
                                      const Tolerances& tol = {});

// Rows sorted by (tensor, task); floats printed with 17 significant digits.
void write_norm_report_csv(std::ostream& os, std::vector<NormRow> rows);

// Parses a layer index and module tag out of a dotted tensor name, e.g.
// "model.layers.12.self_attn.q_proj.weight" -> (12, "self_attn.q_proj").
std::pair<int, std::string> parse_tensor_name(const std::string& name);

struct LandscapeResult {
  std::vector<double> xs, ys;   // grid coordinates, basis units
  Eigen::MatrixXd loss;         // loss(iy, ix)
  Eigen::MatrixXd e1, e2;       // orthonormal plane basis (flattened shape)
  std::vector<std::pair<double, double>> projected;  // model coordinates
};

using LossFn = std::function<double(const Eigen::VectorXd&)>;

// Spans the plane through the first two model directions (Gram-Schmidt) and
// evaluates the loss on an (nx x ny) grid over [-extent, extent]^2 around the
// base point. Throws DEGENERATE_DIRECTIONS when the second direction is
// parallel to the first (residual < 1e-10 of its norm). The evaluator must be
// pure; grid evaluation may fan out over threads.
LandscapeResult landscape_plane(const Eigen::VectorXd& base,
                                std::span<const Eigen::VectorXd> models,
                                const LossFn& loss, int nx, int ny,
                                double extent, int threads = 1);

void write_landscape_csv(std::ostream& os, const LandscapeResult& plane);

}  // namespace orthomerge
