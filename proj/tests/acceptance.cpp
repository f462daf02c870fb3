// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate: end-to-end numerical guarantees checked against
// independent routes (closed forms, brute-force search, finite differences,
// byte comparisons). Prints one line per criterion and exits nonzero if any
// criterion fails.

#include <fmt/format.h>

#include <Eigen/Dense>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include "orthomerge/analysis.hpp"
#include "orthomerge/decouple.hpp"
#include "orthomerge/errors.hpp"
#include "orthomerge/euclidean.hpp"
#include "orthomerge/manifold.hpp"
#include "orthomerge/rng.hpp"
#include "orthomerge/synthetic.hpp"
#include "orthomerge/tensor_file.hpp"

using namespace orthomerge;

namespace {

struct Criterion {
  std::string name;
  std::function<bool(std::string&)> run;
};

SkewGenerator random_skew(Eigen::Index dim, Rng& rng, double magnitude) {
  SkewGenerator raw{Eigen::MatrixXd(rng.normal_matrix(dim, dim))};
  const double norm = raw.data().norm();
  return SkewGenerator(Eigen::MatrixXd(raw.data() * (magnitude / norm)));
}

EuclideanMethod backend(EuclideanKind kind, double lambda, uint64_t seed = 0) {
  EuclideanMethod m;
  m.kind = kind;
  m.lambda = lambda;
  m.seed = seed;
  return m;
}

double gram_residual(const Eigen::MatrixXd& r) {
  return (r.transpose() * r -
          Eigen::MatrixXd::Identity(r.rows(), r.cols()))
      .norm();
}

// --- criterion 1: the exponential-free retraction lands on the manifold ----

bool check_orthogonality(std::string& note) {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (const Eigen::Index d : {4, 16, 64}) {
    for (uint64_t s = 0; s < 1000; ++s) {
      Rng rng = Rng::stream(1, "orthogonality", s * 100 + static_cast<uint64_t>(d));
      const double magnitude = std::pow(10.0, rng.uniform(-2.0, 2.0));
      const RotationMatrix r = cayley(random_skew(d, rng, magnitude));
      const double dev = std::max(
          gram_residual(r.data()),
          std::abs(r.data().partialPivLu().determinant() - 1.0));
      worst = std::max(worst, dev);
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  note = fmt::format("worst deviation {:.2e} over 3000 draws in {:.1f}s", worst,
                     secs);
  return worst < 1e-6 && secs < 30.0;
}

// --- criterion 2: chart round trip -----------------------------------------

bool check_roundtrip(std::string& note) {
  double worst = 0.0;
  const Eigen::Index dims[] = {4, 16, 64};
  for (uint64_t s = 0; s < 1000; ++s) {
    Rng rng = Rng::stream(2, "roundtrip", s);
    const Eigen::Index d = dims[s % 3];
    const double magnitude = rng.uniform(0.01, 2.0);
    const SkewGenerator q = random_skew(d, rng, magnitude);
    const SkewGenerator back = inverse_cayley(cayley(q));
    worst = std::max(worst, (back.data() - q.data()).norm());
  }
  note = fmt::format("worst |Q - C^-1(C(Q))| = {:.2e} over 1000 draws", worst);
  return worst < 1e-8;
}

// --- criterion 3: corrected merge preserves the mean generator norm --------

bool check_norm_identity(std::string& note) {
  double worst = 0.0;
  for (const int n : {2, 3, 5, 8}) {
    for (uint64_t s = 0; s < 20; ++s) {
      Rng rng = Rng::stream(3, "norm_identity", s * 10 + static_cast<uint64_t>(n));
      std::vector<SkewGenerator> gens;
      double norm_sum = 0.0;
      for (int i = 0; i < n; ++i) {
        gens.push_back(random_skew(16, rng, rng.uniform(0.1, 2.0)));
        norm_sum += gens.back().data().norm();
      }
      const GeneratorMergeResult merged = magnitude_corrected_merge(gens);
      const double want = norm_sum / n;
      worst = std::max(worst,
                       std::abs(merged.merged.data().norm() - want) / want);
    }
  }
  note = fmt::format("worst relative norm error {:.2e}", worst);
  return worst <= 1e-10;
}

// --- criterion 4: plain averaging collapses, the corrected merge does not --

bool check_collapse(std::string& note) {
  int collapsed = 0;
  double worst_identity = 0.0;
  constexpr int kSeeds = 100;
  for (uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng = Rng::stream(4, "collapse", s);
    std::vector<SkewGenerator> gens;
    double norm_sum = 0.0;
    for (int i = 0; i < 5; ++i) {
      gens.push_back(random_skew(32, rng, 0.5));
      norm_sum += gens.back().data().norm();
    }
    const double mean_norm = norm_sum / 5.0;
    const double avg_ratio = mean_generator(gens).data().norm() / mean_norm;
    const double ortho_ratio =
        magnitude_corrected_merge(gens).merged.data().norm() / mean_norm;
    if (avg_ratio < 0.8) ++collapsed;
    worst_identity = std::max(worst_identity, std::abs(ortho_ratio - 1.0));
  }
  note = fmt::format(
      "plain average below 0.8 of the mean norm on {}/{} seeds, corrected "
      "ratio off by {:.2e}",
      collapsed, kSeeds, worst_identity);
  return collapsed >= 95 && worst_identity <= 1e-10;
}

// --- criterion 5: merging one expert returns that expert -------------------

bool check_single_task(std::string& note) {
  Rng rng = Rng::stream(5, "single", 0);
  double worst = 0.0;

  const SkewGenerator q = random_skew(12, rng, 0.7);
  const RotationMatrix r = cayley(q);
  const std::vector<RotationMatrix> one{r};
  for (const OftStrategy strategy :
       {OftStrategy::kOrthoMerge, OftStrategy::kSimpleAvgR,
        OftStrategy::kSeqProductR, OftStrategy::kSimpleAvgQ}) {
    const OftMergeResult m = merge_oft(one, strategy);
    worst = std::max(worst, (m.matrix - r.data()).norm() / r.data().norm());
  }

  const Eigen::MatrixXd base = rng.uniform_matrix(12, 20);
  const Eigen::MatrixXd expert =
      r.data() * base + 0.1 * rng.normal_matrix(12, 20);
  const std::vector<Eigen::MatrixXd> experts{expert};
  std::vector<EuclideanMethod> neutral{
      backend(EuclideanKind::kTaskArithmetic, 1.0),
      backend(EuclideanKind::kTies, 1.0),
      backend(EuclideanKind::kDare, 1.0),
      backend(EuclideanKind::kSimpleAverage, 1.0),
  };
  neutral[1].ties_keep_fraction = 1.0;
  neutral[2].dare_drop_prob = 0.0;
  for (const auto& method : neutral) {
    const HybridResult h =
        hybrid_merge(base, experts, DecoupleStrategy::kGlobal, method, "c05");
    worst = std::max(worst, (h.merged - expert).norm() / expert.norm());
  }
  note = fmt::format("worst relative deviation {:.2e}", worst);
  return worst <= 1e-6;
}

// --- criterion 6: conflict-aware mode degenerates without conflicts --------

bool check_conflict_fallback(std::string& note) {
  double worst = 0.0;
  for (uint64_t s = 0; s < 10; ++s) {
    Rng rng = Rng::stream(6, "no_conflict", s);
    const Eigen::MatrixXd base = rng.uniform_matrix(12, 16);
    const Eigen::MatrixXd direction = rng.normal_matrix(12, 16);
    const double scales[] = {0.5, 1.0, 1.5};
    std::vector<Eigen::MatrixXd> experts;
    std::vector<Eigen::MatrixXd> taus;
    for (const double c : scales) {
      taus.emplace_back(c * direction);
      experts.emplace_back(base + taus.back());
    }
    const EuclideanMethod ta =
        backend(EuclideanKind::kTaskArithmetic, 1.0 / 3.0);
    const HybridResult h =
        hybrid_merge(base, experts, DecoupleStrategy::kConflictAware, ta, "c06");
    const Eigen::MatrixXd flat = base + euclidean_merge(taus, ta, "c06");
    worst = std::max(worst, (h.merged - flat).norm() / base.norm());
  }
  note = fmt::format("worst deviation from the entrywise merge {:.2e}", worst);
  return worst <= 1e-10;
}

// --- criterion 7: noiseless planted rotations are recovered ----------------

bool check_planted_recovery(std::string& note) {
  double worst_task = 0.0;
  double worst_merged = 0.0;
  for (uint64_t s = 0; s < 5; ++s) {
    SyntheticSpec spec;
    spec.d_in = 16;
    spec.d_out = 32;
    spec.num_tasks = 3;
    spec.rotation_magnitude = 0.3;
    spec.alignment = 0.4;
    spec.noise_scale = 0.0;
    spec.seed = 100 + s;
    const PlantedFixture fx = gen_planted(spec);

    for (int t = 0; t < spec.num_tasks; ++t) {
      const Extraction ex = extract_rotation_and_residual(
          fx.base, fx.experts[static_cast<size_t>(t)],
          fx.experts[static_cast<size_t>(t)]);
      worst_task = std::max(
          worst_task,
          (ex.rotation.data() - fx.rotations[static_cast<size_t>(t)].data())
              .norm());
    }

    const HybridResult h = hybrid_merge(
        fx.base, fx.experts, DecoupleStrategy::kGlobal,
        backend(EuclideanKind::kTaskArithmetic, 1.0 / spec.num_tasks), "c07");
    const RotationMatrix direct =
        cayley(magnitude_corrected_merge(fx.generators).merged);
    worst_merged = std::max(
        worst_merged, (h.rotation->data() - direct.data()).norm());
  }
  note = fmt::format("task rotation error {:.2e}, merged rotation error {:.2e}",
                     worst_task, worst_merged);
  return worst_task <= 1e-8 && worst_merged <= 1e-8;
}

// --- criterion 8: merged rotations preserve column geometry ----------------

bool check_geometry_preservation(std::string& note) {
  double worst_energy = 0.0;
  double worst_spectral = 0.0;
  Rng rng = Rng::stream(8, "geometry", 0);
  const Eigen::MatrixXd w = rng.uniform_matrix(16, 32);
  const double energy0 = hyperspherical_energy(w).value;
  const double spectral0 = spectral_norm(w).value;
  for (const int n : {2, 5, 10}) {
    std::vector<RotationMatrix> rotations;
    for (int i = 0; i < n; ++i) {
      rotations.push_back(cayley(random_skew(16, rng, 0.5)));
    }
    const OftMergeResult m = merge_oft(rotations, OftStrategy::kOrthoMerge);
    const Eigen::MatrixXd rotated = m.matrix * w;
    worst_energy = std::max(
        worst_energy,
        std::abs(hyperspherical_energy(rotated).value - energy0) / energy0);
    worst_spectral = std::max(
        worst_spectral,
        std::abs(spectral_norm(rotated).value - spectral0) / spectral0);
  }
  note = fmt::format("energy drift {:.2e}, spectral drift {:.2e}", worst_energy,
                     worst_spectral);
  return worst_energy <= 1e-6 && worst_spectral <= 1e-6;
}

// --- criterion 9: the closed-form alignment beats exhaustive search --------

double fit_cost(const Eigen::MatrixXd& target, const Eigen::MatrixXd& base,
                const Eigen::MatrixXd& r) {
  return (target - r * base).norm();
}

bool check_procrustes_brute_force(std::string& note) {
  double worst_gap_2d = 0.0;
  double worst_gap_3d = 0.0;

  for (uint64_t s = 0; s < 5; ++s) {
    Rng rng = Rng::stream(9, "procrustes2", s);
    const Eigen::MatrixXd base = rng.uniform_matrix(2, 5);
    const Eigen::MatrixXd target = rng.uniform_matrix(2, 5);
    const double analytic = fit_cost(target, base, procrustes(target, base).rotation.data());

    constexpr int kGrid = 10000;
    double grid_min = std::numeric_limits<double>::infinity();
    for (int k = 0; k < kGrid; ++k) {
      const double theta = 2.0 * M_PI * k / kGrid;
      Eigen::Matrix2d r;
      r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
      grid_min = std::min(grid_min, fit_cost(target, base, r));
    }
    // The analytic minimizer may never exceed any sampled rotation, and the
    // grid must approach it to within one Lipschitz step.
    const double lipschitz = 2.0 * base.norm() * (target.norm() + base.norm());
    const double step = 2.0 * M_PI / kGrid;
    if (analytic > grid_min + 1e-9) {
      note = fmt::format("a sampled 2x2 rotation beat the analytic fit by {:.2e}",
                         analytic - grid_min);
      return false;
    }
    worst_gap_2d = std::max(worst_gap_2d, grid_min - analytic);
    if (grid_min - analytic > lipschitz * step) {
      note = "the 2x2 grid could not approach the analytic fit";
      return false;
    }
  }

  for (uint64_t s = 0; s < 5; ++s) {
    Rng rng = Rng::stream(9, "procrustes3", s);
    const Eigen::MatrixXd base = rng.uniform_matrix(3, 6);
    const Eigen::MatrixXd target = rng.uniform_matrix(3, 6);
    const double analytic = fit_cost(target, base, procrustes(target, base).rotation.data());

    constexpr int kGrid = 21;
    double grid_min = std::numeric_limits<double>::infinity();
    auto rot_z = [](double a) {
      Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
      r(0, 0) = std::cos(a);
      r(0, 1) = -std::sin(a);
      r(1, 0) = std::sin(a);
      r(1, 1) = std::cos(a);
      return r;
    };
    auto rot_y = [](double b) {
      Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
      r(0, 0) = std::cos(b);
      r(0, 2) = std::sin(b);
      r(2, 0) = -std::sin(b);
      r(2, 2) = std::cos(b);
      return r;
    };
    for (int ia = 0; ia < kGrid; ++ia) {
      const double alpha = -M_PI + 2.0 * M_PI * ia / (kGrid - 1);
      for (int ib = 0; ib < kGrid; ++ib) {
        const double beta = M_PI * ib / (kGrid - 1);
        for (int ic = 0; ic < kGrid; ++ic) {
          const double gamma = -M_PI + 2.0 * M_PI * ic / (kGrid - 1);
          const Eigen::Matrix3d r = rot_z(alpha) * rot_y(beta) * rot_z(gamma);
          grid_min = std::min(grid_min, fit_cost(target, base, r));
        }
      }
    }
    const double lipschitz = 2.0 * base.norm() * (target.norm() + base.norm());
    const double steps = 2.0 * (2.0 * M_PI / (kGrid - 1)) + M_PI / (kGrid - 1);
    if (analytic > grid_min + 1e-9) {
      note = fmt::format("a sampled 3x3 rotation beat the analytic fit by {:.2e}",
                         analytic - grid_min);
      return false;
    }
    worst_gap_3d = std::max(worst_gap_3d, grid_min - analytic);
    if (grid_min - analytic > lipschitz * steps) {
      note = "the 3x3 grid could not approach the analytic fit";
      return false;
    }
  }

  note = fmt::format("grid excess over the analytic fit: 2x2 {:.2e}, 3x3 {:.2e}",
                     worst_gap_2d, worst_gap_3d);
  return true;
}

// --- criterion 10: the hybrid merge wins the joint quadratic objective -----
//
// Each method runs under its own default scaling: the standalone entrywise
// baseline sums task vectors at lambda 1, the hybrid merge averages residuals
// at lambda 1/N. The comparison is statistical over seeds, not per seed.

bool check_joint_loss(std::string& note) {
  constexpr int kSeeds = 50;
  int wins = 0;
  double hybrid_total = 0.0;
  double flat_total = 0.0;
  for (uint64_t s = 0; s < kSeeds; ++s) {
    SyntheticSpec spec;
    spec.d_in = 12;
    spec.d_out = 16;
    spec.num_tasks = 4;
    spec.rotation_magnitude = 0.5;
    spec.alignment = 0.6;
    spec.noise_scale = 0.02;
    spec.seed = 1000 + s;
    const PlantedFixture fx = gen_planted(spec);
    const QuadraticSuite suite = gen_quadratic_tasks(fx, spec.seed);

    const EuclideanMethod residual =
        backend(EuclideanKind::kTaskArithmetic, 1.0 / spec.num_tasks, spec.seed);
    const HybridResult h = hybrid_merge(fx.base, fx.experts,
                                        DecoupleStrategy::kGlobal, residual, "c10");

    const EuclideanMethod standalone =
        backend(EuclideanKind::kTaskArithmetic, 1.0, spec.seed);
    std::vector<Eigen::MatrixXd> deltas;
    for (const auto& w : fx.experts) deltas.emplace_back(w - fx.base);
    const Eigen::MatrixXd flat =
        fx.base + euclidean_merge(deltas, standalone, "c10");

    const double hybrid_loss = suite.joint_loss(h.merged);
    const double flat_loss = suite.joint_loss(flat);
    hybrid_total += hybrid_loss;
    flat_total += flat_loss;
    if (hybrid_loss <= flat_loss) ++wins;
  }
  note = fmt::format(
      "mean joint loss {:.4f} (rotation-aware) vs {:.4f} (entrywise defaults), "
      "{}/{} seed wins",
      hybrid_total / kSeeds, flat_total / kSeeds, wins, kSeeds);
  return hybrid_total <= flat_total;
}

// --- criterion 11: container io round trips and rejects malformed input ----

std::filesystem::path scratch_dir() {
  static std::atomic<uint64_t> counter{0};
  const auto stamp =
      std::chrono::steady_clock::now().time_since_epoch().count();
  auto dir = std::filesystem::temp_directory_path() /
             fmt::format("orthomerge_accept_{}_{}", stamp, counter.fetch_add(1));
  std::filesystem::create_directories(dir);
  return dir;
}

bool check_container_io(std::string& note) {
  const auto dir = scratch_dir();
  bool ok = true;
  std::string detail;

  Eigen::MatrixXd values(2, 3);
  values << 1.5, -0.25, 2.0, -8.0, 0.5, 3.0;  // exact in every float width
  TensorFile file;
  for (const Dtype dtype :
       {Dtype::kF64, Dtype::kF32, Dtype::kF16, Dtype::kBF16}) {
    file.tensors.emplace(std::string(dtype_name(dtype)),
                         TensorRecord::from_matrix(values, dtype));
  }
  const auto good = dir / "roundtrip.safetensors";
  store_tensor_file(good, file);
  const TensorFile loaded = load_tensor_file(good);
  for (const auto& [name, record] : file.tensors) {
    if (loaded.tensors.at(name).payload() != record.payload() ||
        loaded.tensors.at(name).to_matrix() != values) {
      ok = false;
      detail += fmt::format(" {} round trip differs;", name);
    }
  }

  auto expect_reject = [&](const std::string& label, const std::string& header,
                           size_t payload_bytes, ErrorCode want) {
    const auto path = dir / (label + ".safetensors");
    {
      std::ofstream out(path, std::ios::binary);
      const uint64_t len = header.size();
      out.write(reinterpret_cast<const char*>(&len), 8);
      out.write(header.data(), static_cast<std::streamsize>(header.size()));
      const std::string zeros(payload_bytes, '\0');
      out.write(zeros.data(), static_cast<std::streamsize>(zeros.size()));
    }
    try {
      TensorFileReader reader(path);
    } catch (const Error& e) {
      if (e.code() != want) {
        ok = false;
        detail += fmt::format(" {} raised the wrong code;", label);
      }
      return;
    }
    ok = false;
    detail += fmt::format(" {} was accepted;", label);
  };

  expect_reject("truncated",
                R"({"v":{"dtype":"F64","shape":[3],"data_offsets":[0,24]}})", 16,
                ErrorCode::kOffsetOutOfRange);
  expect_reject("overlap",
                R"({"a":{"dtype":"F64","shape":[1],"data_offsets":[0,8]},)"
                R"("b":{"dtype":"F64","shape":[1],"data_offsets":[4,12]}})",
                12, ErrorCode::kOffsetOutOfRange);
  expect_reject("badjson", "{not json", 0, ErrorCode::kMalformedHeader);
  expect_reject("badsize",
                R"({"v":{"dtype":"F64","shape":[2],"data_offsets":[0,8]}})", 8,
                ErrorCode::kMalformedHeader);
  expect_reject("baddtype",
                R"({"v":{"dtype":"X99","shape":[1],"data_offsets":[0,8]}})", 8,
                ErrorCode::kUnsupportedDtype);

  std::error_code ec;
  std::filesystem::remove_all(dir, ec);
  note = ok ? "4 dtypes round trip, 5 malformed containers rejected"
            : "problems:" + detail;
  return ok;
}

// --- criterion 12: closed-form gradients match finite differences ----------

bool check_fd_gradient(std::string& note) {
  SyntheticSpec spec;
  spec.d_in = 8;
  spec.d_out = 10;
  spec.num_tasks = 3;
  spec.rotation_magnitude = 0.4;
  spec.seed = 12;
  const PlantedFixture fx = gen_planted(spec);
  const QuadraticSuite suite = gen_quadratic_tasks(fx, spec.seed);

  Rng rng = Rng::stream(12, "fd", 0);
  Eigen::MatrixXd w = fx.base + 0.3 * rng.normal_matrix(spec.d_in, spec.d_out);
  double worst = 0.0;
  const double h = 1e-5;
  for (const auto& task : suite.tasks) {
    const Eigen::MatrixXd grad = task.gradient(w);
    for (int probe = 0; probe < 10; ++probe) {
      const Eigen::Index i = static_cast<Eigen::Index>(rng.next_u64() %
                                                       static_cast<uint64_t>(w.rows()));
      const Eigen::Index j = static_cast<Eigen::Index>(rng.next_u64() %
                                                       static_cast<uint64_t>(w.cols()));
      Eigen::MatrixXd wp = w;
      Eigen::MatrixXd wm = w;
      wp(i, j) += h;
      wm(i, j) -= h;
      const double fd = (task.loss(wp) - task.loss(wm)) / (2.0 * h);
      const double scale = std::max(1.0, std::abs(grad(i, j)));
      worst = std::max(worst, std::abs(fd - grad(i, j)) / scale);
    }
  }
  note = fmt::format("worst gradient deviation {:.2e} over 30 probes", worst);
  return worst <= 1e-6;
}

// --- criterion 13: the command line tool is byte-deterministic -------------

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

bool check_cli_determinism(std::string& note) {
  const char* cli = std::getenv("ORTHOMERGE_CLI");
  if (cli == nullptr) {
    note = "ORTHOMERGE_CLI is not set";
    return false;
  }
  const auto dir = scratch_dir();
  auto sh = [&](const std::string& cmd) {
    return std::system((cmd + " >/dev/null 2>&1").c_str()) == 0;
  };
  const std::string synth =
      fmt::format("{} synth --d-in 8 --d-out 12 --tasks 3 --magnitude 0.3 "
                  "--alignment 0.5 --seed 5 --out-dir {}",
                  cli, (dir / "fix{}").string());
  bool ok = sh(fmt::format(fmt::runtime(synth), 1)) &&
            sh(fmt::format(fmt::runtime(synth), 2));

  for (const char* name : {"base.safetensors", "expert_0.safetensors",
                           "adapter_2.safetensors", "truth.safetensors"}) {
    const std::string a = slurp(dir / "fix1" / name);
    ok = ok && !a.empty() && a == slurp(dir / "fix2" / name);
  }

  const std::string merge = fmt::format(
      "{} decouple-merge --base {} --expert {} --expert {} --expert {} "
      "--backend dare --dare-drop 0.25 --lambda 0.5 --seed 13 --output {}",
      cli, (dir / "fix1" / "base.safetensors").string(),
      (dir / "fix1" / "expert_0.safetensors").string(),
      (dir / "fix1" / "expert_1.safetensors").string(),
      (dir / "fix1" / "expert_2.safetensors").string(), "{}");
  ok = ok &&
       sh(fmt::format(fmt::runtime(merge), (dir / "m1.safetensors").string())) &&
       sh(fmt::format(fmt::runtime(merge), (dir / "m2.safetensors").string()));
  if (ok) {
    const std::string m1 = slurp(dir / "m1.safetensors");
    ok = !m1.empty() && m1 == slurp(dir / "m2.safetensors");
  }

  std::error_code ec;
  std::filesystem::remove_all(dir, ec);
  note = ok ? "fixture generation and merge byte-stable across reruns"
            : "outputs differed or a command failed";
  return ok;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"rotations stay orthogonal across magnitudes", check_orthogonality},
      {"generator chart round trip", check_roundtrip},
      {"corrected merge keeps the mean generator norm", check_norm_identity},
      {"plain averaging collapses, corrected merge does not", check_collapse},
      {"single-expert merges return the expert", check_single_task},
      {"conflict-aware mode degenerates without conflicts",
       check_conflict_fallback},
      {"noiseless planted rotations recovered", check_planted_recovery},
      {"merged rotations preserve energy and spectrum",
       check_geometry_preservation},
      {"alignment fit beats exhaustive rotation search",
       check_procrustes_brute_force},
      {"hybrid merge wins the joint quadratic objective", check_joint_loss},
      {"containers round trip and reject malformed input", check_container_io},
      {"closed-form gradients match finite differences", check_fd_gradient},
      {"command line runs are byte-deterministic", check_cli_determinism},
  };

  const auto suite_start = std::chrono::steady_clock::now();
  int failures = 0;
  int index = 0;
  for (const auto& criterion : criteria) {
    ++index;
    std::string notes;
    bool passed = false;
    const auto start = std::chrono::steady_clock::now();
    try {
      passed = criterion.run(notes);
    } catch (const std::exception& e) {
      notes = fmt::format("threw: {}", e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (!passed) ++failures;
    fmt::print("[{}] {:02d} {:<52} {} ({:.2f}s)\n", passed ? "PASS" : "FAIL",
               index, criterion.name, notes, secs);
  }

  const double total =
      std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                    suite_start)
          .count();
  const bool on_time = total < 300.0;
  if (!on_time) ++failures;
  fmt::print("[{}] {:02d} {:<52} finished in {:.1f}s of the 300s budget\n",
             on_time ? "PASS" : "FAIL", index + 1, "the full gate fits the time budget",
             total);
  fmt::print("{}/{} criteria passed\n",
             static_cast<int>(criteria.size()) + 1 - failures,
             static_cast<int>(criteria.size()) + 1);
  return failures == 0 ? 0 : 1;
}
