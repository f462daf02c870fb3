// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#include "orthomerge/synthetic.hpp"

#include <fmt/format.h>

#include <cmath>

#include "orthomerge/errors.hpp"
#include "orthomerge/rng.hpp"

namespace orthomerge {
namespace {

void validate(const SyntheticSpec& s) {
  if (s.d_in < 2 || s.d_out < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("fixture needs d_in >= 2 and d_out >= 1, got {}x{}",
                            s.d_in, s.d_out));
  }
  if (s.num_tasks < 1) {
    throw Error(ErrorCode::kEmptyInput, "num_tasks must be >= 1");
  }
  if (!(s.rotation_magnitude >= 0.0) || !(s.noise_scale >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "magnitude and noise must be >= 0");
  }
  if (!(s.alignment >= -1.0 && s.alignment <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("alignment must be in [-1, 1], got {}", s.alignment));
  }
  if (s.block_size && (*s.block_size < 1 || s.d_in % *s.block_size != 0)) {
    throw Error(ErrorCode::kBadBlockLayout,
                fmt::format("block size {} does not divide d_in {}",
                            *s.block_size, s.d_in));
  }
}

// Random skew matrix restricted to the diagonal blocks, entries uniform(-1, 1)
// before antisymmetrization.
Eigen::MatrixXd random_skew(Rng& rng, Eigen::Index d,
                            std::optional<Eigen::Index> block_size) {
  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(d, d);
  for_each_block(d, block_size, [&](Eigen::Index off, Eigen::Index b) {
    raw.block(off, off, b, b) = rng.uniform_matrix(b, b);
  });
  return 0.5 * (raw - raw.transpose());
}

}  // namespace

PlantedFixture gen_planted(const SyntheticSpec& spec) {
  validate(spec);
  PlantedFixture out;

  Rng base_rng = Rng::stream(spec.seed, "planted/base", 0);
  out.base = base_rng.uniform_matrix(spec.d_in, spec.d_out);
  for (Eigen::Index j = 0; j < out.base.cols(); ++j) {
    const double n = out.base.col(j).norm();
    if (n > 0.0) out.base.col(j) /= n;
  }

  Rng shared_rng = Rng::stream(spec.seed, "planted/shared", 0);
  const Eigen::MatrixXd shared = random_skew(shared_rng, spec.d_in, spec.block_size);

  const double a = spec.alignment;
  const double shared_weight = std::sqrt(std::abs(a));
  const double indep_weight = std::sqrt(1.0 - std::abs(a));

  for (int i = 0; i < spec.num_tasks; ++i) {
    Rng task_rng = Rng::stream(spec.seed, "planted/task", static_cast<uint64_t>(i));
    const Eigen::MatrixXd indep = random_skew(task_rng, spec.d_in, spec.block_size);
    const double sign = (a >= 0.0 || i % 2 == 0) ? 1.0 : -1.0;
    Eigen::MatrixXd raw = sign * shared_weight * shared + indep_weight * indep;
    const double raw_norm = raw.norm();
    if (spec.rotation_magnitude == 0.0 || raw_norm == 0.0) {
      raw.setZero();
    } else {
      raw *= spec.rotation_magnitude / raw_norm;
    }
    out.generators.emplace_back(std::move(raw), spec.block_size);
    out.rotations.push_back(cayley(out.generators.back()));

    WeightMatrix expert = out.rotations.back().data() * out.base;
    if (spec.noise_scale > 0.0) {
      Rng noise_rng = Rng::stream(spec.seed, "planted/noise", static_cast<uint64_t>(i));
      expert += spec.noise_scale * noise_rng.normal_matrix(spec.d_in, spec.d_out);
    }
    out.experts.push_back(std::move(expert));
  }
  return out;
}

double QuadraticTask::loss(const WeightMatrix& w) const {
  return (w * probe - target_product).squaredNorm();
}

Eigen::MatrixXd QuadraticTask::gradient(const WeightMatrix& w) const {
  return 2.0 * (w - expert) * (probe * probe.transpose());
}

double QuadraticSuite::joint_loss(const WeightMatrix& w) const {
  if (tasks.empty()) {
    throw Error(ErrorCode::kEmptyInput, "no tasks");
  }
  double sum = 0.0;
  for (const auto& t : tasks) sum += t.loss(w);
  return sum / static_cast<double>(tasks.size());
}

QuadraticSuite gen_quadratic_tasks(const PlantedFixture& fixture, uint64_t seed) {
  QuadraticSuite suite;
  for (size_t i = 0; i < fixture.experts.size(); ++i) {
    Rng rng = Rng::stream(seed, "quadratic/probe", static_cast<uint64_t>(i));
    QuadraticTask task;
    const Eigen::Index d_out = fixture.base.cols();
    task.probe = rng.uniform_matrix(d_out, d_out);
    task.expert = fixture.experts[i];
    task.target_product = task.expert * task.probe;
    suite.tasks.push_back(std::move(task));
  }
  return suite;
}

QuadraticSuite gen_quadratic_tasks(const SyntheticSpec& spec) {
  return gen_quadratic_tasks(gen_planted(spec), spec.seed);
}

}  // namespace orthomerge
