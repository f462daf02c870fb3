// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#include "orthomerge/euclidean.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "orthomerge/errors.hpp"
#include "orthomerge/rng.hpp"

namespace orthomerge {
namespace {

void validate(std::span<const Eigen::MatrixXd> deltas, const EuclideanMethod& m) {
  if (deltas.empty()) {
    throw Error(ErrorCode::kEmptyInput, "no task deltas to merge");
  }
  for (size_t i = 1; i < deltas.size(); ++i) {
    if (deltas[i].rows() != deltas[0].rows() || deltas[i].cols() != deltas[0].cols()) {
      throw Error(ErrorCode::kShapeMismatch,
                  fmt::format("delta {} has shape {}x{}, expected {}x{}", i,
                              deltas[i].rows(), deltas[i].cols(), deltas[0].rows(),
                              deltas[0].cols()));
    }
  }
  if (!(m.lambda > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("lambda must be > 0, got {}", m.lambda));
  }
  if (!(m.ties_keep_fraction > 0.0 && m.ties_keep_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("ties_keep_fraction must be in (0, 1], got {}",
                            m.ties_keep_fraction));
  }
  if (!(m.dare_drop_prob >= 0.0 && m.dare_drop_prob < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("dare_drop_prob must be in [0, 1), got {}",
                            m.dare_drop_prob));
  }
}

Eigen::MatrixXd trim_by_magnitude(const Eigen::MatrixXd& delta, double keep_fraction) {
  const Eigen::Index n = delta.size();
  const auto k = std::min<Eigen::Index>(
      n, std::max<Eigen::Index>(
             1, static_cast<Eigen::Index>(
                    std::ceil(keep_fraction * static_cast<double>(n)))));
  std::vector<Eigen::Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const double* v = delta.data();
  // Strict total order (|value| descending, linear index ascending) keeps the
  // selection deterministic under threshold ties.
  const auto higher = [v](Eigen::Index a, Eigen::Index b) {
    const double fa = std::abs(v[a]);
    const double fb = std::abs(v[b]);
    return fa != fb ? fa > fb : a < b;
  };
  std::nth_element(order.begin(), order.begin() + (k - 1), order.end(), higher);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(delta.rows(), delta.cols());
  for (Eigen::Index i = 0; i < k; ++i) {
    out.data()[order[static_cast<size_t>(i)]] = v[order[static_cast<size_t>(i)]];
  }
  return out;
}

Eigen::MatrixXd ties_merge(std::span<const Eigen::MatrixXd> deltas,
                           const EuclideanMethod& m) {
  std::vector<Eigen::MatrixXd> trimmed;
  trimmed.reserve(deltas.size());
  for (const auto& d : deltas) trimmed.push_back(trim_by_magnitude(d, m.ties_keep_fraction));

  Eigen::MatrixXd elected_sum = Eigen::MatrixXd::Zero(deltas[0].rows(), deltas[0].cols());
  for (const auto& t : trimmed) elected_sum += t;

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(deltas[0].rows(), deltas[0].cols());
  for (Eigen::Index e = 0; e < out.size(); ++e) {
    const bool positive = elected_sum.data()[e] >= 0.0;  // tie at zero -> +
    double acc = 0.0;
    int matching = 0;
    for (const auto& t : trimmed) {
      const double value = t.data()[e];
      if (value == 0.0) continue;
      if ((value > 0.0) == positive) {
        acc += value;
        ++matching;
      }
    }
    out.data()[e] = matching > 0 ? m.lambda * (acc / matching) : 0.0;
  }
  return out;
}

Eigen::MatrixXd dare_merge(std::span<const Eigen::MatrixXd> deltas,
                           const EuclideanMethod& m, std::string_view label) {
  const double rescale = 1.0 / (1.0 - m.dare_drop_prob);
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(deltas[0].rows(), deltas[0].cols());
  for (size_t task = 0; task < deltas.size(); ++task) {
    Rng rng = Rng::stream(m.seed, label, task);
    const double* v = deltas[task].data();
    for (Eigen::Index e = 0; e < acc.size(); ++e) {
      if (rng.uniform() >= m.dare_drop_prob) {
        acc.data()[e] += rescale * v[e];
      }
    }
  }
  return m.lambda * acc;
}

}  // namespace

Eigen::MatrixXd euclidean_merge(std::span<const Eigen::MatrixXd> deltas,
                                const EuclideanMethod& method,
                                std::string_view stream_label) {
  validate(deltas, method);
  switch (method.kind) {
    case EuclideanKind::kTaskArithmetic: {
      Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(deltas[0].rows(), deltas[0].cols());
      for (const auto& d : deltas) sum += d;
      return method.lambda * sum;
    }
    case EuclideanKind::kSimpleAverage: {
      Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(deltas[0].rows(), deltas[0].cols());
      for (const auto& d : deltas) sum += d;
      return sum / static_cast<double>(deltas.size());
    }
    case EuclideanKind::kTies:
      return ties_merge(deltas, method);
    case EuclideanKind::kDare:
      return dare_merge(deltas, method, stream_label);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown euclidean merge kind");
}

}  // namespace orthomerge
