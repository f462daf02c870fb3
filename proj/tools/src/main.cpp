// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
//
// orthomerge command line tool.
//
// Exit codes: 0 success, 2 recipe or usage, 3 container format, 4 shape or
// layout, 5 numeric domain, 6 io, 7 internal.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "orthomerge/analysis.hpp"
#include "orthomerge/checkpoint.hpp"
#include "orthomerge/decouple.hpp"
#include "orthomerge/errors.hpp"
#include "orthomerge/oft_adapter.hpp"
#include "orthomerge/pipeline.hpp"
#include "orthomerge/recipe.hpp"
#include "orthomerge/rng.hpp"
#include "orthomerge/synthetic.hpp"
#include "orthomerge/tensor_file.hpp"

namespace om = orthomerge;
using nlohmann::json;

namespace {

int exit_family(om::ErrorCode code) {
  switch (code) {
    case om::ErrorCode::kRecipeInvalid:
    case om::ErrorCode::kInvalidArgument:
      return 2;
    case om::ErrorCode::kMalformedHeader:
    case om::ErrorCode::kOffsetOutOfRange:
    case om::ErrorCode::kUnsupportedDtype:
      return 3;
    case om::ErrorCode::kShapeMismatch:
    case om::ErrorCode::kBadBlockLayout:
    case om::ErrorCode::kEmptyInput:
      return 4;
    case om::ErrorCode::kCayleyDomain:
    case om::ErrorCode::kSingularSolve:
    case om::ErrorCode::kDegenerateDirections:
    case om::ErrorCode::kDuplicateColumns:
      return 5;
    case om::ErrorCode::kIoError:
      return 6;
  }
  return 7;
}

om::EmitKind parse_emit(const std::string& s) {
  if (s == "weights") return om::EmitKind::kWeights;
  if (s == "rotations") return om::EmitKind::kRotations;
  throw om::Error(om::ErrorCode::kInvalidArgument, "unknown emit kind: " + s);
}

om::CayleyDomainPolicy parse_policy(const std::string& s) {
  if (s == "error") return om::CayleyDomainPolicy::kError;
  if (s == "skip_tensor") return om::CayleyDomainPolicy::kSkipTensor;
  throw om::Error(om::ErrorCode::kInvalidArgument, "unknown policy: " + s);
}

om::DecoupleStrategy parse_strategy(const std::string& s) {
  if (s == "global") return om::DecoupleStrategy::kGlobal;
  if (s == "conflict_aware") return om::DecoupleStrategy::kConflictAware;
  throw om::Error(om::ErrorCode::kInvalidArgument, "unknown strategy: " + s);
}

om::EuclideanKind parse_backend(const std::string& s) {
  if (s == "ta") return om::EuclideanKind::kTaskArithmetic;
  if (s == "ties") return om::EuclideanKind::kTies;
  if (s == "dare") return om::EuclideanKind::kDare;
  if (s == "simple_avg") return om::EuclideanKind::kSimpleAverage;
  throw om::Error(om::ErrorCode::kInvalidArgument, "unknown backend: " + s);
}

om::Dtype parse_dtype_flag(const std::string& s) {
  if (s == "f16") return om::Dtype::kF16;
  if (s == "bf16") return om::Dtype::kBF16;
  if (s == "f32") return om::Dtype::kF32;
  if (s == "f64") return om::Dtype::kF64;
  throw om::Error(om::ErrorCode::kInvalidArgument, "unknown dtype: " + s);
}

std::string shape_string(const std::vector<int64_t>& shape) {
  if (shape.empty()) return "scalar";
  return fmt::format("{}", fmt::join(shape, "x"));
}

Eigen::VectorXd flatten(const Eigen::MatrixXd& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

void report_outcome(const om::MergeOutcome& outcome, bool dry_run, bool as_json) {
  if (as_json) {
    json doc = outcome.diagnostics;
    doc["output"] = outcome.output_path.string();
    doc["diagnostics_path"] = outcome.diagnostics_path.string();
    fmt::print("{}\n", doc.dump(2));
    return;
  }
  fmt::print(stderr, "{} {} tensors: {} merged, {} passthrough, {} skipped\n",
             dry_run ? "planned" : "processed", outcome.tensors.size(),
             outcome.merged, outcome.passthrough, outcome.skipped);
  if (!dry_run) {
    fmt::print(stderr, "output: {}\n", outcome.output_path.string());
    fmt::print(stderr, "diagnostics: {}\n", outcome.diagnostics_path.string());
  }
}

std::ostream& open_output(const std::string& path, std::ofstream& file) {
  if (path == "-") return std::cout;
  file.open(path, std::ios::trunc);
  if (!file) {
    throw om::Error(om::ErrorCode::kIoError, "cannot write " + path);
  }
  return file;
}

bool selected_by(const std::vector<std::string>& include,
                 const std::vector<std::string>& exclude, const std::string& name) {
  bool in = false;
  for (const auto& p : include) {
    if (om::glob_match(p, name)) {
      in = true;
      break;
    }
  }
  if (!in) return false;
  for (const auto& p : exclude) {
    if (om::glob_match(p, name)) return false;
  }
  return true;
}

// merge: run a recipe file, with optional command line overrides.
struct MergeArgs {
  std::string recipe;
  std::string output;
  std::string diagnostics;
  std::string emit;
  std::string policy;
  uint64_t seed = 0;
  int threads = 1;
  bool dry_run = false;
  bool as_json = false;
};

void setup_merge(CLI::App& app) {
  auto args = std::make_shared<MergeArgs>();
  auto* cmd = app.add_subcommand("merge", "Run a merge recipe file");
  cmd->add_option("--recipe", args->recipe, "Recipe JSON path")
      ->required()
      ->check(CLI::ExistingFile);
  auto* out_opt = cmd->add_option("--output", args->output, "Override output path");
  auto* diag_opt =
      cmd->add_option("--diagnostics", args->diagnostics, "Override sidecar path");
  auto* emit_opt = cmd->add_option("--emit", args->emit, "weights or rotations")
                       ->check(CLI::IsMember({"weights", "rotations"}));
  auto* policy_opt =
      cmd->add_option("--on-cayley-domain", args->policy, "error or skip_tensor")
          ->check(CLI::IsMember({"error", "skip_tensor"}));
  auto* seed_opt = cmd->add_option("--seed", args->seed, "Override RNG seed");
  cmd->add_option("--threads", args->threads, "Worker threads")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--dry-run", args->dry_run, "Plan only, write nothing");
  cmd->add_flag("--json", args->as_json, "Machine readable output on stdout");
  cmd->callback([args, out_opt, diag_opt, emit_opt, policy_opt, seed_opt] {
    om::MergeRecipe recipe = om::load_recipe(args->recipe);
    if (out_opt->count() > 0) recipe.output = args->output;
    if (diag_opt->count() > 0) recipe.diagnostics_path = args->diagnostics;
    if (emit_opt->count() > 0) recipe.emit = parse_emit(args->emit);
    if (policy_opt->count() > 0) recipe.on_cayley_domain = parse_policy(args->policy);
    if (seed_opt->count() > 0) recipe.seed = args->seed;
    om::RunOptions opts;
    opts.threads = args->threads;
    opts.dry_run = args->dry_run;
    report_outcome(om::run_merge(recipe, opts), args->dry_run, args->as_json);
  });
}

// decouple-merge: the rotation + residual pipeline without a recipe file.
struct DecoupleArgs {
  std::string base;
  std::vector<std::string> experts;
  std::string output;
  std::string diagnostics;
  std::string strategy = "global";
  std::string backend = "ta";
  std::optional<double> lambda;
  double ties_keep = 0.2;
  double dare_drop = 0.9;
  std::optional<int64_t> block_size;
  uint64_t seed = 0;
  bool transpose = false;
  std::string emit = "weights";
  std::string policy = "error";
  std::vector<std::string> include{"*"};
  std::vector<std::string> exclude;
  std::optional<std::string> output_dtype;
  int threads = 1;
  bool dry_run = false;
  bool as_json = false;
};

void setup_decouple_merge(CLI::App& app) {
  auto args = std::make_shared<DecoupleArgs>();
  auto* cmd = app.add_subcommand(
      "decouple-merge", "Split expert updates into rotation and residual, merge both");
  cmd->add_option("--base", args->base, "Base checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--expert", args->experts, "Expert checkpoint (repeatable)")
      ->required();
  cmd->add_option("--output", args->output, "Merged checkpoint path")->required();
  cmd->add_option("--diagnostics", args->diagnostics, "Sidecar path");
  cmd->add_option("--strategy", args->strategy, "global or conflict_aware")
      ->check(CLI::IsMember({"global", "conflict_aware"}));
  cmd->add_option("--backend", args->backend, "Residual backend")
      ->check(CLI::IsMember({"ta", "ties", "dare", "simple_avg"}));
  cmd->add_option("--lambda", args->lambda, "Backend scale (default 1/N)");
  cmd->add_option("--ties-keep", args->ties_keep, "TIES keep fraction");
  cmd->add_option("--dare-drop", args->dare_drop, "DARE drop probability");
  cmd->add_option("--block-size", args->block_size, "Expected rotation block size");
  cmd->add_option("--seed", args->seed, "RNG seed");
  cmd->add_flag("--transpose", args->transpose,
                "Transpose rank-2 tensors on load (out-major storage)");
  cmd->add_option("--emit", args->emit, "weights or rotations")
      ->check(CLI::IsMember({"weights", "rotations"}));
  cmd->add_option("--on-cayley-domain", args->policy, "error or skip_tensor")
      ->check(CLI::IsMember({"error", "skip_tensor"}));
  cmd->add_option("--include", args->include, "Tensor glob to include");
  cmd->add_option("--exclude", args->exclude, "Tensor glob to exclude");
  cmd->add_option("--output-dtype", args->output_dtype, "f16, bf16, f32 or f64")
      ->check(CLI::IsMember({"f16", "bf16", "f32", "f64"}));
  cmd->add_option("--threads", args->threads, "Worker threads")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--dry-run", args->dry_run, "Plan only, write nothing");
  cmd->add_flag("--json", args->as_json, "Machine readable output on stdout");
  cmd->callback([args] {
    om::MergeRecipe recipe;
    recipe.method = om::MergeMethod::kDecouple;
    recipe.base = args->base;
    recipe.experts = args->experts;
    recipe.output = args->output;
    if (!args->diagnostics.empty()) recipe.diagnostics_path = args->diagnostics;
    recipe.strategy = parse_strategy(args->strategy);
    recipe.residual_backend.kind = parse_backend(args->backend);
    recipe.residual_backend.lambda = args->lambda;
    recipe.residual_backend.ties_keep_fraction = args->ties_keep;
    recipe.residual_backend.dare_drop_prob = args->dare_drop;
    if (args->block_size) {
      recipe.block_size = static_cast<Eigen::Index>(*args->block_size);
    }
    recipe.seed = args->seed;
    recipe.transpose_on_load = args->transpose;
    recipe.emit = parse_emit(args->emit);
    recipe.on_cayley_domain = parse_policy(args->policy);
    recipe.include = args->include;
    recipe.exclude = args->exclude;
    if (args->output_dtype) recipe.output_dtype = parse_dtype_flag(*args->output_dtype);
    om::RunOptions opts;
    opts.threads = args->threads;
    opts.dry_run = args->dry_run;
    report_outcome(om::run_merge(recipe, opts), args->dry_run, args->as_json);
  });
}

// inspect: list tensors and check square float matrices for orthogonality.
struct InspectArgs {
  std::string input;
  double ortho_tol = 1e-6;
  bool as_json = false;
};

void setup_inspect(CLI::App& app) {
  auto args = std::make_shared<InspectArgs>();
  auto* cmd = app.add_subcommand("inspect", "List tensors and orthogonality checks");
  cmd->add_option("--input", args->input, "Checkpoint or tensor file")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--ortho-tol", args->ortho_tol, "Gram residual tolerance");
  cmd->add_flag("--json", args->as_json, "Machine readable output on stdout");
  cmd->callback([args] {
    om::CheckpointReader reader(args->input);
    json rows = json::array();
    for (const auto& [name, info] : reader.manifest()) {
      json row;
      row["name"] = name;
      row["dtype"] = info.dtype;
      row["shape"] = info.shape;
      row["nbytes"] = info.end - info.begin;
      const bool floaty = info.dtype == "F16" || info.dtype == "BF16" ||
                          info.dtype == "F32" || info.dtype == "F64";
      if (floaty && info.shape.size() == 2 && info.shape[0] == info.shape[1] &&
          info.shape[0] >= 1) {
        const Eigen::MatrixXd m = reader.read(name).to_matrix();
        const Eigen::Index d = m.rows();
        const double gram =
            (m.transpose() * m - Eigen::MatrixXd::Identity(d, d)).norm();
        const double det_dev = std::abs(m.partialPivLu().determinant() - 1.0);
        row["gram_residual"] = gram;
        row["det_deviation"] = det_dev;
        row["orthogonal"] = gram <= args->ortho_tol;
      }
      rows.push_back(std::move(row));
    }
    if (args->as_json) {
      json doc;
      doc["path"] = args->input;
      doc["tensors"] = std::move(rows);
      fmt::print("{}\n", doc.dump(2));
      return;
    }
    for (const auto& row : rows) {
      std::string note;
      if (row.contains("gram_residual")) {
        note = fmt::format("{} (|R^T R - I|_F = {:.3e}, |det - 1| = {:.3e})",
                           row["orthogonal"].get<bool>() ? "orthogonal"
                                                         : "not orthogonal",
                           row["gram_residual"].get<double>(),
                           row["det_deviation"].get<double>());
      }
      fmt::print("{:<48} {:>5} {:>14} {:>12}  {}\n",
                 row["name"].get<std::string>(), row["dtype"].get<std::string>(),
                 shape_string(row["shape"].get<std::vector<int64_t>>()),
                 row["nbytes"].get<uint64_t>(), note);
    }
    fmt::print(stderr, "{} tensors\n", rows.size());
  });
}

// stats: per-tensor, per-task rotational vs residual norm decomposition.
struct StatsArgs {
  std::string base;
  std::vector<std::string> experts;
  std::vector<std::string> labels;
  std::string strategy = "global";
  bool transpose = false;
  std::vector<std::string> include{"*"};
  std::vector<std::string> exclude;
  std::string output = "-";
  std::string geometry_output;
};

void setup_stats(CLI::App& app) {
  auto args = std::make_shared<StatsArgs>();
  auto* cmd =
      app.add_subcommand("stats", "Rotation vs residual norm report as CSV");
  cmd->add_option("--base", args->base, "Base checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--expert", args->experts, "Expert checkpoint (repeatable)")
      ->required();
  cmd->add_option("--label", args->labels, "Expert label (repeatable)");
  cmd->add_option("--strategy", args->strategy, "global or conflict_aware")
      ->check(CLI::IsMember({"global", "conflict_aware"}));
  cmd->add_flag("--transpose", args->transpose, "Transpose rank-2 tensors on load");
  cmd->add_option("--include", args->include, "Tensor glob to include");
  cmd->add_option("--exclude", args->exclude, "Tensor glob to exclude");
  cmd->add_option("--output", args->output, "CSV path, - for stdout");
  cmd->add_option("--geometry-output", args->geometry_output,
                  "Optional CSV of hyperspherical energy and spectral norm");
  cmd->callback([args] {
    om::CheckpointReader base(args->base);
    std::vector<std::unique_ptr<om::CheckpointReader>> experts;
    for (const auto& p : args->experts) {
      experts.push_back(std::make_unique<om::CheckpointReader>(p));
    }
    std::vector<std::string> labels = args->labels;
    if (labels.empty()) {
      for (const auto& p : args->experts) {
        labels.push_back(std::filesystem::path(p).stem().string());
      }
    }
    if (labels.size() != experts.size()) {
      throw om::Error(om::ErrorCode::kInvalidArgument,
                      "label count does not match expert count");
    }
    const om::DecoupleStrategy strategy = parse_strategy(args->strategy);

    std::vector<om::NormRow> rows;
    std::vector<std::array<std::string, 2>> geometry_targets;
    std::ofstream geom_file;
    std::ostream* geom = nullptr;
    if (!args->geometry_output.empty()) {
      geom = &open_output(args->geometry_output, geom_file);
      *geom << "checkpoint,tensor,hyperspherical_energy,spectral_norm\n";
    }

    for (const auto& [name, info] : base.manifest()) {
      const bool floaty = info.dtype == "F16" || info.dtype == "BF16" ||
                          info.dtype == "F32" || info.dtype == "F64";
      if (!floaty || info.shape.size() != 2) continue;
      if (!selected_by(args->include, args->exclude, name)) continue;
      const int64_t rows_dim = info.shape[args->transpose ? 1 : 0];
      const int64_t cols_dim = info.shape[args->transpose ? 0 : 1];
      if (rows_dim < 2 || cols_dim < 2) continue;
      bool everywhere = true;
      for (const auto& ex : experts) {
        auto it = ex->manifest().find(name);
        if (it == ex->manifest().end() || it->second.shape != info.shape) {
          everywhere = false;
          break;
        }
      }
      if (!everywhere) continue;

      Eigen::MatrixXd w0 = base.read(name).to_matrix();
      if (args->transpose) w0.transposeInPlace();
      std::vector<om::WeightMatrix> ws;
      for (const auto& ex : experts) {
        Eigen::MatrixXd w = ex->read(name).to_matrix();
        if (args->transpose) w.transposeInPlace();
        ws.push_back(std::move(w));
      }
      auto tensor_rows = om::norm_report_rows(name, w0, ws, labels, strategy);
      rows.insert(rows.end(), tensor_rows.begin(), tensor_rows.end());

      if (geom != nullptr) {
        auto geometry_row = [&](const std::string& label,
                                const om::WeightMatrix& w) {
          double energy = std::numeric_limits<double>::quiet_NaN();
          try {
            energy = om::hyperspherical_energy(w).value;
          } catch (const om::Error&) {
          }
          const double spectral = om::spectral_norm(w).value;
          *geom << fmt::format("{},{},{:.17g},{:.17g}\n", label, name, energy,
                               spectral);
        };
        geometry_row("base", w0);
        for (size_t i = 0; i < ws.size(); ++i) geometry_row(labels[i], ws[i]);
      }
    }

    std::ofstream csv_file;
    std::ostream& csv = open_output(args->output, csv_file);
    om::write_norm_report_csv(csv, std::move(rows));
  });
}

// synth: deterministic planted-rotation fixtures on disk.
struct SynthArgs {
  std::string out_dir;
  int64_t d_in = 16;
  int64_t d_out = 32;
  int tasks = 5;
  double magnitude = 0.3;
  double alignment = 0.0;
  double noise = 0.0;
  std::optional<int64_t> block_size;
  uint64_t seed = 0;
  int layers = 1;
  std::string dtype = "f64";
  bool as_json = false;
};

void setup_synth(CLI::App& app) {
  auto args = std::make_shared<SynthArgs>();
  auto* cmd = app.add_subcommand(
      "synth", "Write planted-rotation fixture checkpoints and adapters");
  cmd->add_option("--out-dir", args->out_dir, "Output directory")->required();
  cmd->add_option("--d-in", args->d_in, "Rotated dimension (matrix rows)");
  cmd->add_option("--d-out", args->d_out, "Matrix columns");
  cmd->add_option("--tasks", args->tasks, "Number of experts")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--magnitude", args->magnitude, "Generator Frobenius norm");
  cmd->add_option("--alignment", args->alignment, "Generator correlation in [-1,1]");
  cmd->add_option("--noise", args->noise, "Additive Gaussian noise sigma");
  cmd->add_option("--block-size", args->block_size, "Block-diagonal generator size");
  cmd->add_option("--seed", args->seed, "Master seed");
  cmd->add_option("--layers", args->layers, "Planted matrices per checkpoint")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--dtype", args->dtype, "Storage dtype")
      ->check(CLI::IsMember({"f16", "bf16", "f32", "f64"}));
  cmd->add_flag("--json", args->as_json, "Machine readable output on stdout");
  cmd->callback([args] {
    const om::Dtype dtype = parse_dtype_flag(args->dtype);
    std::filesystem::create_directories(args->out_dir);
    const std::filesystem::path dir(args->out_dir);

    om::TensorFile base_file;
    std::vector<om::TensorFile> expert_files(static_cast<size_t>(args->tasks));
    std::vector<om::TensorFile> adapter_files(static_cast<size_t>(args->tasks));
    om::TensorFile truth_file;

    std::map<std::string, std::string> meta = {
        {"d_in", std::to_string(args->d_in)},
        {"d_out", std::to_string(args->d_out)},
        {"tasks", std::to_string(args->tasks)},
        {"magnitude", fmt::format("{}", args->magnitude)},
        {"alignment", fmt::format("{}", args->alignment)},
        {"noise", fmt::format("{}", args->noise)},
        {"seed", std::to_string(args->seed)},
        {"layers", std::to_string(args->layers)},
    };
    if (args->block_size) meta["block_size"] = std::to_string(*args->block_size);

    for (int layer = 0; layer < args->layers; ++layer) {
      om::SyntheticSpec spec;
      spec.d_in = static_cast<Eigen::Index>(args->d_in);
      spec.d_out = static_cast<Eigen::Index>(args->d_out);
      spec.num_tasks = args->tasks;
      spec.rotation_magnitude = args->magnitude;
      spec.noise_scale = args->noise;
      spec.alignment = args->alignment;
      if (args->block_size) {
        spec.block_size = static_cast<Eigen::Index>(*args->block_size);
      }
      spec.seed = om::mix_seed(args->seed,
                               om::fnv1a64(fmt::format("layer/{}", layer)));
      const om::PlantedFixture fixture = om::gen_planted(spec);
      const std::string name = fmt::format("layers.{}.linear.weight", layer);

      base_file.tensors[name] = om::TensorRecord::from_matrix(fixture.base, dtype);
      for (int t = 0; t < args->tasks; ++t) {
        expert_files[static_cast<size_t>(t)].tensors[name] =
            om::TensorRecord::from_matrix(fixture.experts[static_cast<size_t>(t)],
                                          dtype);
        adapter_files[static_cast<size_t>(t)].tensors[om::oft_tensor_name(name)] =
            om::pack_oft_generator(fixture.generators[static_cast<size_t>(t)],
                                   dtype);
        truth_file.tensors[fmt::format("{}.rotation.{}", name, t)] =
            om::TensorRecord::from_matrix(
                fixture.rotations[static_cast<size_t>(t)].data(), dtype);
      }
    }

    base_file.metadata = meta;
    truth_file.metadata = meta;
    std::vector<std::string> written;
    auto store = [&](const std::filesystem::path& p, const om::TensorFile& f) {
      om::store_tensor_file(p, f);
      written.push_back(p.string());
    };
    store(dir / "base.safetensors", base_file);
    for (int t = 0; t < args->tasks; ++t) {
      expert_files[static_cast<size_t>(t)].metadata = meta;
      adapter_files[static_cast<size_t>(t)].metadata = meta;
      store(dir / fmt::format("expert_{}.safetensors", t),
            expert_files[static_cast<size_t>(t)]);
      store(dir / fmt::format("adapter_{}.safetensors", t),
            adapter_files[static_cast<size_t>(t)]);
    }
    store(dir / "truth.safetensors", truth_file);

    if (args->as_json) {
      json doc;
      doc["files"] = written;
      doc["seed"] = args->seed;
      fmt::print("{}\n", doc.dump(2));
    } else {
      for (const auto& f : written) fmt::print(stderr, "wrote {}\n", f);
    }
  });
}

// landscape: joint quadratic loss surface over the plane spanned by the
// first two expert directions, with merged models projected onto it.
struct LandscapeArgs {
  int64_t d_in = 16;
  int64_t d_out = 32;
  int tasks = 5;
  double magnitude = 0.3;
  double alignment = 0.0;
  double noise = 0.0;
  std::optional<int64_t> block_size;
  uint64_t seed = 0;
  int nx = 41;
  int ny = 41;
  double extent = 0.0;  // 0 = auto
  std::optional<double> lambda;
  std::vector<std::string> methods{"ortho", "avg_q", "ta"};
  std::string output = "landscape.csv";
  std::string points;
  int threads = 1;
  bool as_json = false;
};

void setup_landscape(CLI::App& app) {
  auto args = std::make_shared<LandscapeArgs>();
  auto* cmd = app.add_subcommand(
      "landscape", "Quadratic-task loss surface around a planted fixture");
  cmd->add_option("--d-in", args->d_in, "Rotated dimension (matrix rows)");
  cmd->add_option("--d-out", args->d_out, "Matrix columns");
  cmd->add_option("--tasks", args->tasks, "Number of experts")
      ->check(CLI::Range(2, 1024));
  cmd->add_option("--magnitude", args->magnitude, "Generator Frobenius norm");
  cmd->add_option("--alignment", args->alignment, "Generator correlation");
  cmd->add_option("--noise", args->noise, "Additive noise sigma");
  cmd->add_option("--block-size", args->block_size, "Block-diagonal generator size");
  cmd->add_option("--seed", args->seed, "Master seed");
  cmd->add_option("--nx", args->nx, "Grid columns")->check(CLI::Range(2, 4096));
  cmd->add_option("--ny", args->ny, "Grid rows")->check(CLI::Range(2, 4096));
  cmd->add_option("--extent", args->extent,
                  "Half-width of the plane; 0 fits the projected models");
  cmd->add_option("--lambda", args->lambda,
                  "Euclidean scale for ta/ties/dare (default 1/N)");
  cmd->add_option("--method", args->methods,
                  "Merged model to project: ortho, avg_r, seq_r, avg_q, "
                  "decouple, conflict, ta, ties, dare, simple_avg");
  cmd->add_option("--output", args->output, "Grid CSV path");
  cmd->add_option("--points", args->points, "Projected model CSV path");
  cmd->add_option("--threads", args->threads, "Grid evaluation threads")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--json", args->as_json, "Machine readable output on stdout");
  cmd->callback([args] {
    om::SyntheticSpec spec;
    spec.d_in = static_cast<Eigen::Index>(args->d_in);
    spec.d_out = static_cast<Eigen::Index>(args->d_out);
    spec.num_tasks = args->tasks;
    spec.rotation_magnitude = args->magnitude;
    spec.noise_scale = args->noise;
    spec.alignment = args->alignment;
    if (args->block_size) {
      spec.block_size = static_cast<Eigen::Index>(*args->block_size);
    }
    spec.seed = args->seed;
    const om::PlantedFixture fixture = om::gen_planted(spec);
    const om::QuadraticSuite suite = om::gen_quadratic_tasks(fixture, spec.seed);
    const Eigen::Index d_in = spec.d_in;
    const Eigen::Index d_out = spec.d_out;

    const double default_lambda = 1.0 / static_cast<double>(args->tasks);
    const double lam = args->lambda.value_or(default_lambda);
    std::vector<Eigen::MatrixXd> deltas;
    for (const auto& w : fixture.experts) deltas.push_back(w - fixture.base);

    auto merged_for = [&](const std::string& method) -> Eigen::MatrixXd {
      auto oft = [&](om::OftStrategy s) -> Eigen::MatrixXd {
        return om::merge_oft(fixture.rotations, s).matrix * fixture.base;
      };
      auto euclid = [&](om::EuclideanKind kind) -> Eigen::MatrixXd {
        om::EuclideanMethod m;
        m.kind = kind;
        m.lambda = lam;
        m.seed = spec.seed;
        return fixture.base + om::euclidean_merge(deltas, m, "landscape");
      };
      if (method == "ortho") return oft(om::OftStrategy::kOrthoMerge);
      if (method == "avg_r") return oft(om::OftStrategy::kSimpleAvgR);
      if (method == "seq_r") return oft(om::OftStrategy::kSeqProductR);
      if (method == "avg_q") return oft(om::OftStrategy::kSimpleAvgQ);
      if (method == "decouple" || method == "conflict") {
        om::EuclideanMethod m;
        m.kind = om::EuclideanKind::kTaskArithmetic;
        m.lambda = default_lambda;
        m.seed = spec.seed;
        const auto strategy = method == "decouple"
                                  ? om::DecoupleStrategy::kGlobal
                                  : om::DecoupleStrategy::kConflictAware;
        return om::hybrid_merge(fixture.base, fixture.experts, strategy, m,
                                "landscape")
            .merged;
      }
      if (method == "ta") return euclid(om::EuclideanKind::kTaskArithmetic);
      if (method == "ties") return euclid(om::EuclideanKind::kTies);
      if (method == "dare") return euclid(om::EuclideanKind::kDare);
      if (method == "simple_avg") return euclid(om::EuclideanKind::kSimpleAverage);
      throw om::Error(om::ErrorCode::kInvalidArgument,
                      "unknown landscape method: " + method);
    };

    std::vector<std::string> labels;
    std::vector<Eigen::VectorXd> models;
    std::vector<Eigen::MatrixXd> model_mats;
    for (size_t i = 0; i < fixture.experts.size(); ++i) {
      labels.push_back(fmt::format("expert_{}", i));
      model_mats.push_back(fixture.experts[i]);
      models.push_back(flatten(fixture.experts[i]));
    }
    for (const auto& method : args->methods) {
      labels.push_back(method);
      model_mats.push_back(merged_for(method));
      models.push_back(flatten(model_mats.back()));
    }

    om::LossFn loss = [&suite, d_in, d_out](const Eigen::VectorXd& v) {
      Eigen::Map<const Eigen::MatrixXd> w(v.data(), d_in, d_out);
      return suite.joint_loss(w);
    };
    const Eigen::VectorXd base_flat = flatten(fixture.base);

    double extent = args->extent;
    if (extent <= 0.0) {
      const auto probe = om::landscape_plane(base_flat, models, loss, 2, 2, 1.0, 1);
      double max_coord = 0.0;
      for (const auto& [x, y] : probe.projected) {
        max_coord = std::max({max_coord, std::abs(x), std::abs(y)});
      }
      extent = max_coord > 0.0 ? 1.25 * max_coord : 1.0;
    }
    const auto plane = om::landscape_plane(base_flat, models, loss, args->nx,
                                           args->ny, extent, args->threads);

    std::ofstream grid_file;
    std::ostream& grid = open_output(args->output, grid_file);
    om::write_landscape_csv(grid, plane);

    json points = json::array();
    for (size_t i = 0; i < models.size(); ++i) {
      points.push_back({{"label", labels[i]},
                        {"x", plane.projected[i].first},
                        {"y", plane.projected[i].second},
                        {"loss", suite.joint_loss(model_mats[i])}});
    }
    if (!args->points.empty()) {
      std::ofstream points_file;
      std::ostream& pts = open_output(args->points, points_file);
      pts << "label,x,y,loss\n";
      for (const auto& p : points) {
        pts << fmt::format("{},{:.17g},{:.17g},{:.17g}\n",
                           p["label"].get<std::string>(), p["x"].get<double>(),
                           p["y"].get<double>(), p["loss"].get<double>());
      }
    }
    if (args->as_json) {
      json doc;
      doc["extent"] = extent;
      doc["grid"] = args->output;
      doc["points"] = std::move(points);
      fmt::print("{}\n", doc.dump(2));
    } else {
      fmt::print(stderr, "wrote {} ({}x{} grid, extent {:.4g})\n", args->output,
                 args->nx, args->ny, extent);
    }
  });
}

// validate-recipe: schema check without running anything.
struct ValidateArgs {
  std::string recipe;
  bool as_json = false;
};

void setup_validate(CLI::App& app) {
  auto args = std::make_shared<ValidateArgs>();
  auto* cmd = app.add_subcommand("validate-recipe", "Check a recipe file");
  cmd->add_option("--recipe", args->recipe, "Recipe JSON path")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_flag("--json", args->as_json, "Machine readable output on stdout");
  cmd->callback([args] {
    std::ifstream in(args->recipe);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      if (args->as_json) {
        json out;
        out["valid"] = false;
        out["problems"] = {std::string("not valid JSON: ") + e.what()};
        fmt::print("{}\n", out.dump(2));
      }
      throw om::Error(om::ErrorCode::kRecipeInvalid,
                      std::string("not valid JSON: ") + e.what());
    }
    const std::vector<std::string> problems = om::validate_recipe_json(doc);
    if (args->as_json) {
      json out;
      out["valid"] = problems.empty();
      out["problems"] = problems;
      fmt::print("{}\n", out.dump(2));
    } else {
      for (const auto& p : problems) fmt::print(stderr, "problem: {}\n", p);
    }
    if (!problems.empty()) {
      throw om::Error(om::ErrorCode::kRecipeInvalid,
                      fmt::format("recipe has {} problem(s)", problems.size()));
    }
    if (!args->as_json) fmt::print(stderr, "recipe is valid\n");
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orthomerge: model merging on the rotation manifold"};
  app.require_subcommand(1);
  setup_merge(app);
  setup_decouple_merge(app);
  setup_inspect(app);
  setup_stats(app);
  setup_synth(app);
  setup_landscape(app);
  setup_validate(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const om::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return exit_family(e.code());
  } catch (const std::exception& e) {
    fmt::print(stderr, "internal error: {}\n", e.what());
    return 7;
  }
  return 0;
}
