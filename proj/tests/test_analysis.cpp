// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "orthomerge/analysis.hpp"
#include "orthomerge/errors.hpp"
#include "orthomerge/rng.hpp"

using namespace orthomerge;

namespace {

RotationMatrix random_rotation(Eigen::Index d, uint64_t seed, double magnitude) {
  Rng rng(seed);
  SkewGenerator q(rng.normal_matrix(d, d));
  return cayley(SkewGenerator(q.data() * (magnitude / q.data().norm())));
}

}  // namespace

TEST_SUITE("analysis") {

TEST_CASE("energy of two orthogonal unit columns is 1") {
  const Eigen::MatrixXd w = Eigen::MatrixXd::Identity(2, 2);
  const EnergyResult res = hyperspherical_energy(w);
  CHECK(res.value == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(res.zero_columns == 0);
  CHECK(res.duplicate_pairs == 0);
}

TEST_CASE("energy matches an independently computed three-column value") {
  Eigen::MatrixXd w(2, 3);
  w << 1, 0, 1, 0, 1, 1;
  const EnergyResult res = hyperspherical_energy(w);
  CHECK(res.value == doctest::Approx(7.828427124746192).epsilon(1e-12));
}

TEST_CASE("a different exponent changes the pair kernel") {
  const Eigen::MatrixXd w = Eigen::MatrixXd::Identity(2, 2);
  const EnergyResult res = hyperspherical_energy(w, 4.0);
  CHECK(res.value == doctest::Approx(0.5).epsilon(1e-13));
}

TEST_CASE("energy is invariant under rotation of the columns") {
  Rng rng(5);
  const Eigen::MatrixXd w = rng.normal_matrix(6, 10);
  const RotationMatrix r = random_rotation(6, 6, 0.9);
  const EnergyResult a = hyperspherical_energy(w);
  const EnergyResult b = hyperspherical_energy(r.data() * w);
  CHECK(b.value == doctest::Approx(a.value).epsilon(1e-10));
}

TEST_CASE("zero columns are excluded and counted") {
  Eigen::MatrixXd w(2, 3);
  w << 3, 0, -1, 4, 0, 2;
  const EnergyResult res = hyperspherical_energy(w);
  CHECK(res.zero_columns == 1);
  CHECK(res.duplicate_pairs == 0);
  CHECK(std::isfinite(res.value));
  CHECK(res.value > 0.0);
}

TEST_CASE("coincident directions blow the energy up to infinity") {
  Eigen::MatrixXd w(2, 3);
  w << 1, 0, 2, 0, 1, 0;
  const EnergyResult res = hyperspherical_energy(w);
  CHECK(res.duplicate_pairs == 1);
  CHECK(std::isinf(res.value));
}

TEST_CASE("energy input validation") {
  Eigen::MatrixXd w(2, 2);
  w << 1, 0, 0, 0;
  try {
    hyperspherical_energy(w);
    FAIL("expected an error for a single nonzero column");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidArgument);
  }
  try {
    hyperspherical_energy(Eigen::MatrixXd::Identity(2, 2), 0.0);
    FAIL("expected an error for a non-positive exponent");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidArgument);
  }
}

TEST_CASE("spectral norm matches an independently computed value") {
  Eigen::MatrixXd w(3, 2);
  w << 1, 2, 3, 4, 5, 6;
  const SpectralResult res = spectral_norm(w);
  CHECK(res.converged);
  CHECK(res.iterations >= 1);
  CHECK(res.value == doctest::Approx(9.525518091565107).epsilon(1e-9));
}

TEST_CASE("power iteration agrees with a dense SVD") {
  Rng rng(7);
  const Eigen::MatrixXd w = rng.normal_matrix(20, 12);
  const SpectralResult res = spectral_norm(w);
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(w);
  const double reference = svd.singularValues()(0);
  CHECK(res.converged);
  CHECK(res.value == doctest::Approx(reference).epsilon(1e-7));
}

TEST_CASE("the spectral norm of the zero matrix is zero") {
  const SpectralResult res = spectral_norm(Eigen::MatrixXd::Zero(4, 3));
  CHECK(res.value == 0.0);
  CHECK(res.converged);
}

TEST_CASE("tensor names split into layer index and module tag") {
  auto [l1, t1] = parse_tensor_name("model.layers.12.self_attn.q_proj.weight");
  CHECK(l1 == 12);
  CHECK(t1 == "self_attn.q_proj");
  auto [l2, t2] = parse_tensor_name("h.3.mlp.weight");
  CHECK(l2 == 3);
  CHECK(t2 == "mlp");
  auto [l3, t3] = parse_tensor_name("embed.weight");
  CHECK(l3 == -1);
  CHECK(t3 == "embed");
  auto [l4, t4] = parse_tensor_name("blocks.7.attn.bias");
  CHECK(l4 == 7);
  CHECK(t4 == "attn.bias");
}

TEST_CASE("norm rows attribute a pure rotation entirely to the ortho part") {
  Rng rng(8);
  const Eigen::MatrixXd base = rng.uniform_matrix(6, 9);
  std::vector<WeightMatrix> experts{
      random_rotation(6, 9, 0.8).data() * base,
      base + 0.3 * rng.normal_matrix(6, 9),
  };
  std::vector<std::string> labels{"rotated", "shifted"};
  const std::vector<NormRow> rows =
      norm_report_rows("model.layers.4.ffn.weight", base, experts, labels,
                       DecoupleStrategy::kGlobal);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].checkpoint == "rotated");
  CHECK(rows[0].layer == 4);
  CHECK(rows[0].module_tag == "ffn");
  CHECK(rows[0].residual_norm < 1e-10);
  CHECK(rows[0].ortho_norm ==
        doctest::Approx(rows[0].full_norm).epsilon(1e-8));
  CHECK(rows[1].checkpoint == "shifted");
  CHECK(rows[1].residual_norm > 0.1 * rows[1].full_norm);
  CHECK(rows[1].residual_norm <= rows[1].full_norm * 1.5);
}

TEST_CASE("norm report requires one label per expert") {
  Rng rng(9);
  const Eigen::MatrixXd base = rng.uniform_matrix(3, 3);
  std::vector<WeightMatrix> experts{base};
  std::vector<std::string> labels{"a", "b"};
  try {
    norm_report_rows("t", base, experts, labels, DecoupleStrategy::kGlobal);
    FAIL("expected a label count error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidArgument);
  }
}

TEST_CASE("norm report csv sorts by tensor and prints 17 significant digits") {
  NormRow b;
  b.checkpoint = "task0";
  b.tensor = "b.weight";
  b.layer = -1;
  b.module_tag = "b";
  b.full_norm = 0.1 + 0.2;
  NormRow a = b;
  a.tensor = "a.weight";
  a.module_tag = "a";
  std::ostringstream os;
  write_norm_report_csv(os, {b, a});
  const std::string text = os.str();
  const std::string header =
      "checkpoint,tensor,layer,module_tag,full_norm,ortho_norm,residual_norm\n";
  CHECK(text.substr(0, header.size()) == header);
  CHECK(text.find("a.weight") < text.find("b.weight"));
  // 0.1 + 0.2 round-trips only with all 17 digits.
  CHECK(text.find("0.30000000000000004") != std::string::npos);
}

TEST_CASE("a quadratic bowl produces the analytic grid and projections") {
  const Eigen::VectorXd base = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(4);
  m1(0) = 1.0;
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(4);
  m2(1) = 1.0;
  std::vector<Eigen::VectorXd> models{m1, m2};
  const LossFn loss = [](const Eigen::VectorXd& v) { return v.squaredNorm(); };
  const LandscapeResult plane = landscape_plane(base, models, loss, 5, 5, 1.0);
  REQUIRE(plane.xs.size() == 5);
  REQUIRE(plane.ys.size() == 5);
  CHECK(plane.xs.front() == -1.0);
  CHECK(plane.xs.back() == 1.0);
  for (size_t iy = 0; iy < 5; ++iy) {
    for (size_t ix = 0; ix < 5; ++ix) {
      const double expected =
          plane.xs[ix] * plane.xs[ix] + plane.ys[iy] * plane.ys[iy];
      CHECK(plane.loss(static_cast<Eigen::Index>(iy),
                       static_cast<Eigen::Index>(ix)) ==
            doctest::Approx(expected).epsilon(1e-14));
    }
  }
  REQUIRE(plane.projected.size() == 2);
  CHECK(plane.projected[0].first == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(plane.projected[0].second == doctest::Approx(0.0));
  CHECK(plane.projected[1].first == doctest::Approx(0.0));
  CHECK(plane.projected[1].second == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("parallel model directions cannot span a plane") {
  const Eigen::VectorXd base = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(3);
  m1(0) = 1.0;
  const Eigen::VectorXd m2 = 2.5 * m1;
  std::vector<Eigen::VectorXd> models{m1, m2};
  const LossFn loss = [](const Eigen::VectorXd& v) { return v.norm(); };
  try {
    landscape_plane(base, models, loss, 3, 3, 1.0);
    FAIL("expected degenerate directions");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateDirections);
  }
  std::vector<Eigen::VectorXd> at_base{base, m1};
  try {
    landscape_plane(base, at_base, loss, 3, 3, 1.0);
    FAIL("expected degenerate directions");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateDirections);
  }
}

TEST_CASE("grid evaluation is identical across thread counts") {
  Rng rng(10);
  const Eigen::VectorXd base = rng.uniform_vector(12);
  std::vector<Eigen::VectorXd> models{base + rng.uniform_vector(12),
                                      base + rng.uniform_vector(12)};
  const Eigen::VectorXd probe = rng.uniform_vector(12);
  const LossFn loss = [&probe](const Eigen::VectorXd& v) {
    const double a = probe.dot(v);
    return a * a + std::sin(v.sum());
  };
  const LandscapeResult one = landscape_plane(base, models, loss, 7, 6, 2.0, 1);
  const LandscapeResult four = landscape_plane(base, models, loss, 7, 6, 2.0, 4);
  CHECK(one.loss == four.loss);
  CHECK(one.xs == four.xs);
  CHECK(one.projected == four.projected);
}

TEST_CASE("landscape csv emits one row per grid point") {
  const Eigen::VectorXd base = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(2);
  m1(0) = 1.0;
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(2);
  m2(1) = 1.0;
  std::vector<Eigen::VectorXd> models{m1, m2};
  const LossFn loss = [](const Eigen::VectorXd& v) { return v.squaredNorm(); };
  const LandscapeResult plane = landscape_plane(base, models, loss, 3, 4, 1.0);
  std::ostringstream os;
  write_landscape_csv(os, plane);
  const std::string text = os.str();
  CHECK(text.rfind("x,y,loss\n", 0) == 0);
  const auto lines = std::count(text.begin(), text.end(), '\n');
  CHECK(lines == 1 + 3 * 4);
}

}  // TEST_SUITE
