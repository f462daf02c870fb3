// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "orthomerge/manifold.hpp"

namespace orthomerge {

// Planted-rotation fixture parameters. alignment in [-1, 1] steers the
// pairwise correlation of the task generators: 1 makes them identical, 0
// independent, and negative values flip the shared component's sign on odd
// tasks (exact cancellation pairs at -1).
struct SyntheticSpec {
  Eigen::Index d_in = 16;
  Eigen::Index d_out = 32;
  int num_tasks = 5;
  double rotation_magnitude = 0.3;  // ||Q_i||_F, exact after rescale
  double noise_scale = 0.0;         // sigma of the additive Gaussian noise
  double alignment = 0.0;
  std::optional<Eigen::Index> block_size;
  uint64_t seed = 0;
};

struct PlantedFixture {
  WeightMatrix base;  // uniform(-1, 1) entries, column-normalized
  std::vector<WeightMatrix> experts;       // R_i * W_0 + sigma * noise
  std::vector<SkewGenerator> generators;   // ground-truth Q_i
  std::vector<RotationMatrix> rotations;   // ground-truth R_i = cayley(Q_i)
};

PlantedFixture gen_planted(const SyntheticSpec& spec);

// Quadratic task loss_i(W) = ||W X_i - W_i X_i||_F^2 with probe X_i of shape
// (d_out, d_out); the gradient 2 (W - W_i) X_i X_i^T is closed-form.
struct QuadraticTask {
  Eigen::MatrixXd probe;
  Eigen::MatrixXd target_product;  // W_i X_i
  Eigen::MatrixXd expert;

  double loss(const WeightMatrix& w) const;
  Eigen::MatrixXd gradient(const WeightMatrix& w) const;
};

struct QuadraticSuite {
  std::vector<QuadraticTask> tasks;
  double joint_loss(const WeightMatrix& w) const;  // mean over tasks
};

QuadraticSuite gen_quadratic_tasks(const PlantedFixture& fixture, uint64_t seed);
QuadraticSuite gen_quadratic_tasks(const SyntheticSpec& spec);

}  // namespace orthomerge
