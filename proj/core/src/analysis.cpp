// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#include "orthomerge/analysis.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <regex>
#include <thread>

#include "orthomerge/errors.hpp"
#include "orthomerge/rng.hpp"

namespace orthomerge {
namespace {

constexpr double kDuplicateColumnDistance = 1e-12;
constexpr double kParallelResidualRatio = 1e-10;

void run_chunked(Eigen::Index count, int threads,
                 const std::function<void(Eigen::Index)>& body) {
  if (threads <= 1 || count < 2) {
    for (Eigen::Index i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  const int workers = std::min<int>(threads, static_cast<int>(count));
  std::atomic<Eigen::Index> next{0};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (Eigen::Index i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        body(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

EnergyResult hyperspherical_energy(const WeightMatrix& w, double s) {
  if (!(s > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("exponent s must be > 0, got {}", s));
  }
  EnergyResult out;
  std::vector<Eigen::VectorXd> unit;
  unit.reserve(static_cast<size_t>(w.cols()));
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    const double n = w.col(j).norm();
    if (n == 0.0) {
      ++out.zero_columns;
      continue;
    }
    unit.push_back(w.col(j) / n);
  }
  if (unit.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("hyperspherical energy needs at least 2 nonzero columns, got {}",
                            unit.size()));
  }
  double half_sum = 0.0;
  for (size_t i = 0; i < unit.size(); ++i) {
    for (size_t j = i + 1; j < unit.size(); ++j) {
      const double dist = (unit[i] - unit[j]).norm();
      if (dist < kDuplicateColumnDistance) {
        ++out.duplicate_pairs;
        continue;
      }
      half_sum += s == 2.0 ? 1.0 / (dist * dist) : std::pow(dist, -s);
    }
  }
  // Ordered pairs: (i, j) and (j, i) both contribute.
  out.value = out.duplicate_pairs > 0 ? std::numeric_limits<double>::infinity()
                                      : 2.0 * half_sum;
  return out;
}

SpectralResult spectral_norm(const WeightMatrix& w, double rel_tol,
                             int max_iterations, uint64_t seed) {
  SpectralResult out;
  if (w.size() == 0) {
    throw Error(ErrorCode::kEmptyInput, "empty matrix");
  }
  Rng rng = Rng::stream(seed, "spectral_norm",
                        static_cast<uint64_t>(w.rows()) * 0x10001u +
                            static_cast<uint64_t>(w.cols()));
  Eigen::VectorXd v = rng.uniform_vector(w.cols(), -1.0, 1.0);
  const double vn = v.norm();
  if (vn == 0.0) {
    v.setOnes();
  }
  v /= v.norm();
  double estimate = (w * v).norm();
  out.converged = false;
  for (int it = 1; it <= max_iterations; ++it) {
    Eigen::VectorXd next = w.transpose() * (w * v);
    const double nn = next.norm();
    if (nn == 0.0) {
      // v is in the null space; sigma_max of a zero map along this start.
      out.value = 0.0;
      out.iterations = it;
      out.converged = w.isZero(0.0);
      return out;
    }
    v = next / nn;
    const double refreshed = (w * v).norm();
    out.iterations = it;
    if (std::abs(refreshed - estimate) <= rel_tol * std::max(refreshed, 1e-300)) {
      estimate = refreshed;
      out.converged = true;
      break;
    }
    estimate = refreshed;
  }
  out.value = estimate;
  return out;
}

std::pair<int, std::string> parse_tensor_name(const std::string& name) {
  static const std::regex layer_re(R"((?:^|\.)(?:layers|h|blocks)\.(\d+)\.(.+)$)");
  std::smatch m;
  std::string tag = name;
  int layer = -1;
  if (std::regex_search(name, m, layer_re)) {
    layer = std::stoi(m[1].str());
    tag = m[2].str();
  }
  const std::string suffix = ".weight";
  if (tag.size() > suffix.size() &&
      tag.compare(tag.size() - suffix.size(), suffix.size(), suffix) == 0) {
    tag.resize(tag.size() - suffix.size());
  }
  return {layer, tag};
}

std::vector<NormRow> norm_report_rows(const std::string& tensor_name,
                                      const WeightMatrix& base,
                                      std::span<const WeightMatrix> experts,
                                      std::span<const std::string> labels,
                                      DecoupleStrategy strategy,
                                      const Tolerances& tol) {
  if (labels.size() != experts.size()) {
    throw Error(ErrorCode::kInvalidArgument, "one label per expert required");
  }
  TargetSet targets = build_targets(base, experts, strategy);
  const auto [layer, tag] = parse_tensor_name(tensor_name);
  std::vector<NormRow> rows;
  rows.reserve(experts.size());
  for (size_t i = 0; i < experts.size(); ++i) {
    Extraction ex =
        extract_rotation_and_residual(base, experts[i], targets.targets[i], tol);
    NormRow row;
    row.checkpoint = labels[i];
    row.tensor = tensor_name;
    row.layer = layer;
    row.module_tag = tag;
    row.full_norm = ex.task.delta.norm();
    row.ortho_norm = (ex.rotation.data() * base - base).norm();
    row.residual_norm = ex.task.residual->norm();
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_norm_report_csv(std::ostream& os, std::vector<NormRow> rows) {
  // Stable sort on the tensor name keeps rows for one tensor in task order.
  std::stable_sort(rows.begin(), rows.end(), [](const NormRow& a, const NormRow& b) {
    return a.tensor < b.tensor;
  });
  os << "checkpoint,tensor,layer,module_tag,full_norm,ortho_norm,residual_norm\n";
  for (const auto& r : rows) {
    os << fmt::format("{},{},{},{},{:.17g},{:.17g},{:.17g}\n", r.checkpoint, r.tensor,
                      r.layer, r.module_tag, r.full_norm, r.ortho_norm,
                      r.residual_norm);
  }
}

LandscapeResult landscape_plane(const Eigen::VectorXd& base,
                                std::span<const Eigen::VectorXd> models,
                                const LossFn& loss, int nx, int ny,
                                double extent, int threads) {
  if (models.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("need at least 2 models to span a plane, got {}", models.size()));
  }
  if (nx < 2 || ny < 2 || !(extent > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "grid needs nx, ny >= 2 and extent > 0");
  }
  for (const auto& m : models) {
    if (m.size() != base.size()) {
      throw Error(ErrorCode::kShapeMismatch, "model parameter vectors must match the base");
    }
  }
  const Eigen::VectorXd d1 = models[0] - base;
  const Eigen::VectorXd d2 = models[1] - base;
  const double n1 = d1.norm();
  const double n2 = d2.norm();
  if (n1 == 0.0 || n2 == 0.0) {
    throw Error(ErrorCode::kDegenerateDirections, "model coincides with the base point");
  }
  LandscapeResult out;
  out.e1 = d1 / n1;
  Eigen::VectorXd r2 = d2 - out.e1.col(0).dot(d2) * out.e1;
  if (r2.norm() < kParallelResidualRatio * n2) {
    throw Error(ErrorCode::kDegenerateDirections,
                "second model direction is parallel to the first");
  }
  out.e2 = r2 / r2.norm();

  for (const auto& m : models) {
    const Eigen::VectorXd d = m - base;
    out.projected.emplace_back(out.e1.col(0).dot(d), out.e2.col(0).dot(d));
  }

  out.xs.resize(static_cast<size_t>(nx));
  out.ys.resize(static_cast<size_t>(ny));
  for (int i = 0; i < nx; ++i) {
    out.xs[static_cast<size_t>(i)] = -extent + 2.0 * extent * i / (nx - 1);
  }
  for (int i = 0; i < ny; ++i) {
    out.ys[static_cast<size_t>(i)] = -extent + 2.0 * extent * i / (ny - 1);
  }
  out.loss.resize(ny, nx);
  run_chunked(static_cast<Eigen::Index>(nx) * ny, threads, [&](Eigen::Index flat) {
    const auto ix = static_cast<int>(flat % nx);
    const auto iy = static_cast<int>(flat / nx);
    const Eigen::VectorXd point = base +
                                  out.xs[static_cast<size_t>(ix)] * out.e1 +
                                  out.ys[static_cast<size_t>(iy)] * out.e2;
    out.loss(iy, ix) = loss(point);
  });
  return out;
}

void write_landscape_csv(std::ostream& os, const LandscapeResult& plane) {
  os << "x,y,loss\n";
  for (size_t iy = 0; iy < plane.ys.size(); ++iy) {
    for (size_t ix = 0; ix < plane.xs.size(); ++ix) {
      os << fmt::format("{:.17g},{:.17g},{:.17g}\n", plane.xs[ix], plane.ys[iy],
                        plane.loss(static_cast<Eigen::Index>(iy),
                                   static_cast<Eigen::Index>(ix)));
    }
  }
}

}  // namespace orthomerge
