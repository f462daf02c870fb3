// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "orthomerge/errors.hpp"
#include "orthomerge/euclidean.hpp"
#include "orthomerge/rng.hpp"

using namespace orthomerge;

namespace {

EuclideanMethod method_of(EuclideanKind kind) {
  EuclideanMethod m;
  m.kind = kind;
  return m;
}

ErrorCode merge_error(std::span<const Eigen::MatrixXd> deltas,
                      const EuclideanMethod& method) {
  try {
    euclidean_merge(deltas, method);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error to be thrown");
  return ErrorCode::kIoError;
}

}  // namespace

TEST_SUITE("euclidean") {

TEST_CASE("task arithmetic is the scaled sum of deltas") {
  Eigen::MatrixXd a(2, 2);
  a << 1.0, -2.0, 0.5, 4.0;
  Eigen::MatrixXd b(2, 2);
  b << -0.5, 1.0, 2.0, -1.0;
  std::vector<Eigen::MatrixXd> deltas{a, b};
  EuclideanMethod m = method_of(EuclideanKind::kTaskArithmetic);
  m.lambda = 0.25;
  const Eigen::MatrixXd out = euclidean_merge(deltas, m);
  const Eigen::MatrixXd expected = 0.25 * (a + b);
  CHECK(out == expected);
}

TEST_CASE("simple average is the plain mean") {
  Eigen::MatrixXd a(2, 3);
  a << 1, 2, 3, 4, 5, 6;
  Eigen::MatrixXd b(2, 3);
  b << -1, 0, 1, 2, 3, 4;
  std::vector<Eigen::MatrixXd> deltas{a, b};
  const Eigen::MatrixXd out =
      euclidean_merge(deltas, method_of(EuclideanKind::kSimpleAverage));
  CHECK((out - (a + b) / 2.0).norm() == 0.0);
}

TEST_CASE("trim, elect and disjoint-mean on a worked 2x2 pair") {
  // Task 1 keeps {3, 2}, task 2 keeps {-2.5, 1} at keep fraction 0.5.
  // Entry (0,0): values 3 and -2.5, sum +0.5, elected +, matching mean 3.
  // Entry (1,0): only task 1 kept 2, elected +, mean 2.
  // Entry (0,1): only task 2 kept 1, elected +, mean 1.
  // Entry (1,1): nothing kept, output 0.
  Eigen::MatrixXd a(2, 2);
  a << 3.0, -0.1, 2.0, 0.05;
  Eigen::MatrixXd b(2, 2);
  b << -2.5, 1.0, 0.2, 0.01;
  std::vector<Eigen::MatrixXd> deltas{a, b};
  EuclideanMethod m = method_of(EuclideanKind::kTies);
  m.ties_keep_fraction = 0.5;
  m.lambda = 1.0;
  const Eigen::MatrixXd out = euclidean_merge(deltas, m);
  Eigen::MatrixXd expected(2, 2);
  expected << 3.0, 1.0, 2.0, 0.0;
  CHECK(out == expected);
}

TEST_CASE("trim ties break toward the lower linear index") {
  // All four entries have |value| 1; keep fraction 0.25 keeps exactly one,
  // the first in column-major order, which is entry (0,0).
  Eigen::MatrixXd t(2, 2);
  t << 1.0, -1.0, 1.0, 1.0;
  std::vector<Eigen::MatrixXd> deltas{t};
  EuclideanMethod m = method_of(EuclideanKind::kTies);
  m.ties_keep_fraction = 0.25;
  const Eigen::MatrixXd out = euclidean_merge(deltas, m);
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(2, 2);
  expected(0, 0) = 1.0;
  CHECK(out == expected);
}

TEST_CASE("a zero sign sum elects the positive side") {
  Eigen::MatrixXd a(1, 1);
  a << 2.0;
  Eigen::MatrixXd b(1, 1);
  b << -2.0;
  std::vector<Eigen::MatrixXd> deltas{a, b};
  EuclideanMethod m = method_of(EuclideanKind::kTies);
  m.ties_keep_fraction = 1.0;
  const Eigen::MatrixXd out = euclidean_merge(deltas, m);
  CHECK(out(0, 0) == 2.0);
}

TEST_CASE("ties keeps exactly ceil(fraction times numel) entries per task") {
  Rng rng(11);
  const Eigen::MatrixXd t = rng.normal_matrix(3, 5);
  for (double keep : {0.1, 0.34, 0.5, 0.99, 1.0}) {
    std::vector<Eigen::MatrixXd> deltas{t};
    EuclideanMethod m = method_of(EuclideanKind::kTies);
    m.ties_keep_fraction = keep;
    const Eigen::MatrixXd out = euclidean_merge(deltas, m);
    const auto kept = (out.array() != 0.0).count();
    const auto expected =
        static_cast<Eigen::Index>(std::ceil(keep * static_cast<double>(t.size())));
    CHECK(kept == expected);
  }
}

TEST_CASE("dare with zero drop probability reduces to task arithmetic") {
  Rng rng(12);
  std::vector<Eigen::MatrixXd> deltas{rng.normal_matrix(4, 4),
                                      rng.normal_matrix(4, 4),
                                      rng.normal_matrix(4, 4)};
  EuclideanMethod dare = method_of(EuclideanKind::kDare);
  dare.dare_drop_prob = 0.0;
  dare.lambda = 1.0;
  EuclideanMethod ta = method_of(EuclideanKind::kTaskArithmetic);
  ta.lambda = 1.0;
  const Eigen::MatrixXd a = euclidean_merge(deltas, dare, "t");
  const Eigen::MatrixXd b = euclidean_merge(deltas, ta, "t");
  CHECK(a == b);
}

TEST_CASE("dare is an unbiased estimator of the delta") {
  // With p = 0.5 each surviving entry doubles; across seeds the mean mask
  // output converges to the input at the Monte Carlo rate. The per-entry
  // standard deviation of one draw is |v| at p = 0.5, so the standard error
  // at 1000 seeds is |v| / 31.6; four standard errors keeps flakes negligible.
  Rng rng(13);
  const Eigen::MatrixXd delta = rng.normal_matrix(4, 4);
  std::vector<Eigen::MatrixXd> deltas{delta};
  EuclideanMethod m = method_of(EuclideanKind::kDare);
  m.dare_drop_prob = 0.5;
  m.lambda = 1.0;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(4, 4);
  const int kSeeds = 1000;
  for (int s = 0; s < kSeeds; ++s) {
    m.seed = static_cast<uint64_t>(s);
    acc += euclidean_merge(deltas, m, "bias");
  }
  const Eigen::MatrixXd mean = acc / static_cast<double>(kSeeds);
  const double bound = 4.0 / std::sqrt(static_cast<double>(kSeeds));
  for (Eigen::Index j = 0; j < 4; ++j) {
    for (Eigen::Index i = 0; i < 4; ++i) {
      CHECK(std::abs(mean(i, j) - delta(i, j)) <=
            bound * std::max(std::abs(delta(i, j)), 0.05));
    }
  }
}

TEST_CASE("dare masks depend on seed, label and task index only") {
  Rng rng(14);
  const Eigen::MatrixXd d0 = rng.normal_matrix(3, 3);
  const Eigen::MatrixXd d1 = rng.normal_matrix(3, 3);
  std::vector<Eigen::MatrixXd> deltas{d0, d1};
  EuclideanMethod m = method_of(EuclideanKind::kDare);
  m.dare_drop_prob = 0.4;
  m.seed = 99;
  const Eigen::MatrixXd a = euclidean_merge(deltas, m, "layer.0");
  const Eigen::MatrixXd b = euclidean_merge(deltas, m, "layer.0");
  CHECK(a == b);
  const Eigen::MatrixXd c = euclidean_merge(deltas, m, "layer.1");
  CHECK(a != c);
  m.seed = 100;
  const Eigen::MatrixXd d = euclidean_merge(deltas, m, "layer.0");
  CHECK(a != d);
  // Swapping the task order changes which stream masks which delta.
  m.seed = 99;
  std::vector<Eigen::MatrixXd> swapped{d1, d0};
  const Eigen::MatrixXd e = euclidean_merge(swapped, m, "layer.0");
  CHECK(a != e);
}

TEST_CASE("deltas of mismatched shapes are rejected") {
  std::vector<Eigen::MatrixXd> deltas{Eigen::MatrixXd::Zero(2, 2),
                                      Eigen::MatrixXd::Zero(3, 2)};
  CHECK(merge_error(deltas, method_of(EuclideanKind::kTaskArithmetic)) ==
        ErrorCode::kShapeMismatch);
}

TEST_CASE("an empty task list is rejected") {
  CHECK(merge_error({}, method_of(EuclideanKind::kTaskArithmetic)) ==
        ErrorCode::kEmptyInput);
}

TEST_CASE("hyperparameters are validated") {
  std::vector<Eigen::MatrixXd> deltas{Eigen::MatrixXd::Zero(2, 2)};
  EuclideanMethod m = method_of(EuclideanKind::kTies);
  m.ties_keep_fraction = 0.0;
  CHECK(merge_error(deltas, m) == ErrorCode::kInvalidArgument);
  m.ties_keep_fraction = 1.5;
  CHECK(merge_error(deltas, m) == ErrorCode::kInvalidArgument);
  EuclideanMethod dare = method_of(EuclideanKind::kDare);
  dare.dare_drop_prob = 1.0;
  CHECK(merge_error(deltas, dare) == ErrorCode::kInvalidArgument);
  dare.dare_drop_prob = -0.1;
  CHECK(merge_error(deltas, dare) == ErrorCode::kInvalidArgument);
  EuclideanMethod ta = method_of(EuclideanKind::kTaskArithmetic);
  ta.lambda = 0.0;
  CHECK(merge_error(deltas, ta) == ErrorCode::kInvalidArgument);
}

}  // TEST_SUITE
