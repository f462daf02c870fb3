// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#include "orthomerge/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <thread>
#include <utility>

#include "orthomerge/checkpoint.hpp"
#include "orthomerge/decouple.hpp"
#include "orthomerge/errors.hpp"
#include "orthomerge/oft_adapter.hpp"

namespace orthomerge {
namespace {

struct PlanEntry {
  std::string name;
  TensorPath path = TensorPath::kPassthrough;
  std::string out_dtype_name;      // container dtype string for the writer
  Dtype out_dtype = Dtype::kF32;   // compute paths only
  std::vector<int64_t> out_shape;
  uint64_t out_nbytes = 0;
  bool in_output = true;
  Eigen::Index rot_dim = 0;  // rotation dimension for manifold paths
};

struct RunContext {
  const MergeRecipe* recipe = nullptr;
  const CheckpointReader* base = nullptr;
  std::vector<std::unique_ptr<CheckpointReader>> others;  // experts or adapters
  EuclideanMethod backend{};
  OftStrategy oft_strategy = OftStrategy::kOrthoMerge;
};

struct ProcessResult {
  std::vector<std::byte> payload;
  TensorReport report;
};

bool is_float_dtype(const std::string& name) {
  return name == "F16" || name == "BF16" || name == "F32" || name == "F64";
}

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

OftStrategy strategy_for(MergeMethod method) {
  switch (method) {
    case MergeMethod::kOrthoMergeOft:
      return OftStrategy::kOrthoMerge;
    case MergeMethod::kAblationSimpleAvgR:
      return OftStrategy::kSimpleAvgR;
    case MergeMethod::kAblationSeqProductR:
      return OftStrategy::kSeqProductR;
    case MergeMethod::kAblationSimpleAvgQ:
      return OftStrategy::kSimpleAvgQ;
    default:
      throw Error(ErrorCode::kInvalidArgument, "method has no rotation strategy");
  }
}

EuclideanKind euclidean_kind_of(MergeMethod method) {
  switch (method) {
    case MergeMethod::kTaskArithmetic:
      return EuclideanKind::kTaskArithmetic;
    case MergeMethod::kTies:
      return EuclideanKind::kTies;
    case MergeMethod::kDare:
      return EuclideanKind::kDare;
    case MergeMethod::kSimpleAverage:
      return EuclideanKind::kSimpleAverage;
    default:
      throw Error(ErrorCode::kInvalidArgument, "method is not Euclidean");
  }
}

std::vector<std::byte> encode_matrix(const Eigen::MatrixXd& m, Dtype dtype,
                                     bool transpose) {
  if (transpose) {
    const Eigen::MatrixXd t = m.transpose();
    return TensorRecord::from_matrix(t, dtype).payload();
  }
  return TensorRecord::from_matrix(m, dtype).payload();
}

// Flat view of a tensor of any rank, row-major storage order.
Eigen::VectorXd read_flat(const CheckpointReader& reader, const std::string& name) {
  return reader.read(name).to_vector();
}

// Rank-2 tensor in compute orientation.
Eigen::MatrixXd read_matrix(const CheckpointReader& reader, const std::string& name,
                            bool transpose) {
  Eigen::MatrixXd m = reader.read(name).to_matrix();
  if (transpose) m.transposeInPlace();
  return m;
}

std::vector<PlanEntry> build_plan(const RunContext& ctx) {
  const MergeRecipe& recipe = *ctx.recipe;
  const bool uses_adapters = method_uses_adapters(recipe.method);
  const bool is_euclidean = method_is_euclidean(recipe.method);

  std::vector<PlanEntry> plan;
  for (const auto& [name, info] : ctx.base->manifest()) {
    PlanEntry entry;
    entry.name = name;
    entry.out_dtype_name = info.dtype;
    entry.out_shape = info.shape;
    entry.out_nbytes = info.end - info.begin;

    const bool floaty = is_float_dtype(info.dtype);
    const bool matrix2d = info.shape.size() == 2;
    const int64_t rows =
        matrix2d ? info.shape[recipe.transpose_on_load ? 1 : 0] : 0;
    const int64_t cols =
        matrix2d ? info.shape[recipe.transpose_on_load ? 0 : 1] : 0;

    if (name_selected(recipe, name) && floaty) {
      if (is_euclidean) {
        entry.path = TensorPath::kEuclidean;
      } else if (uses_adapters) {
        const std::string adapter_name = oft_tensor_name(name);
        size_t covered = 0;
        for (const auto& other : ctx.others) {
          if (other->contains(adapter_name)) ++covered;
        }
        if (covered != 0 && covered != ctx.others.size()) {
          throw Error(ErrorCode::kShapeMismatch,
                      "tensor " + name + " is covered by " +
                          std::to_string(covered) + " of " +
                          std::to_string(ctx.others.size()) + " adapters");
        }
        if (covered == ctx.others.size()) {
          if (!matrix2d || rows < 2) {
            throw Error(ErrorCode::kBadBlockLayout,
                        "adapters cover " + name +
                            " but it is not a matrix with at least two rows");
          }
          entry.path = TensorPath::kOftMerge;
          entry.rot_dim = static_cast<Eigen::Index>(rows);
        }
      } else if (matrix2d && rows >= 2 && cols >= 2) {
        entry.path = TensorPath::kHybrid;
        entry.rot_dim = static_cast<Eigen::Index>(rows);
      } else {
        entry.path = TensorPath::kVector;
      }
    }

    const bool needs_experts = entry.path == TensorPath::kEuclidean ||
                               entry.path == TensorPath::kVector ||
                               entry.path == TensorPath::kHybrid;
    if (needs_experts) {
      for (size_t i = 0; i < ctx.others.size(); ++i) {
        const auto& manifest = ctx.others[i]->manifest();
        auto it = manifest.find(name);
        if (it == manifest.end()) {
          throw Error(ErrorCode::kShapeMismatch,
                      "expert " + std::to_string(i) + " is missing tensor " + name);
        }
        if (it->second.shape != info.shape) {
          throw Error(ErrorCode::kShapeMismatch,
                      "expert " + std::to_string(i) + " has a different shape for " +
                          name);
        }
      }
    }

    if (entry.path != TensorPath::kPassthrough) {
      entry.out_dtype = recipe.output_dtype ? *recipe.output_dtype
                                            : parse_float_dtype(info.dtype);
      entry.out_dtype_name = std::string(dtype_name(entry.out_dtype));
      const bool manifold = entry.path == TensorPath::kOftMerge ||
                            entry.path == TensorPath::kHybrid;
      if (manifold && recipe.emit == EmitKind::kRotations) {
        entry.out_shape = {static_cast<int64_t>(entry.rot_dim),
                           static_cast<int64_t>(entry.rot_dim)};
      }
      entry.out_nbytes = static_cast<uint64_t>(shape_numel(entry.out_shape)) *
                         dtype_size(entry.out_dtype);
    }
    if (recipe.emit == EmitKind::kRotations &&
        !(entry.path == TensorPath::kOftMerge || entry.path == TensorPath::kHybrid)) {
      entry.in_output = false;
    }
    plan.push_back(std::move(entry));
  }
  return plan;
}

// Re-encodes the base tensor in the planned output dtype; used when a tensor
// is skipped so that the payload still matches the declared header entry.
std::vector<std::byte> reencode_base(const RunContext& ctx, const PlanEntry& entry) {
  const Eigen::VectorXd flat = read_flat(*ctx.base, entry.name);
  return TensorRecord::from_vector(flat, entry.out_shape, entry.out_dtype).payload();
}

void mark_skipped(const RunContext& ctx, const PlanEntry& entry, const Error& err,
                  ProcessResult& out) {
  out.report.path = TensorPath::kSkipped;
  out.report.note = err.what();
  out.report.diagnostics.reset();
  if (!entry.in_output) {
    out.payload.clear();
    return;
  }
  if (ctx.recipe->emit == EmitKind::kRotations) {
    const Eigen::MatrixXd eye =
        Eigen::MatrixXd::Identity(entry.rot_dim, entry.rot_dim);
    out.payload = encode_matrix(eye, entry.out_dtype, false);
  } else {
    out.payload = reencode_base(ctx, entry);
  }
}

// Entrywise combination of flat tensors: W = W0 + backend(deltas).
std::vector<std::byte> flat_merge(const RunContext& ctx, const PlanEntry& entry) {
  const Eigen::VectorXd base = read_flat(*ctx.base, entry.name);
  std::vector<Eigen::MatrixXd> deltas;
  deltas.reserve(ctx.others.size());
  for (const auto& other : ctx.others) {
    deltas.emplace_back(read_flat(*other, entry.name) - base);
  }
  const Eigen::MatrixXd merged = euclidean_merge(deltas, ctx.backend, entry.name);
  const Eigen::VectorXd result = base + merged.col(0);
  return TensorRecord::from_vector(result, entry.out_shape, entry.out_dtype).payload();
}

ProcessResult process_entry(const RunContext& ctx, const PlanEntry& entry) {
  const MergeRecipe& recipe = *ctx.recipe;
  ProcessResult out;
  out.report.name = entry.name;
  out.report.path = entry.path;

  switch (entry.path) {
    case TensorPath::kPassthrough: {
      if (entry.in_output) out.payload = ctx.base->read(entry.name).payload();
      break;
    }
    case TensorPath::kEuclidean:
    case TensorPath::kVector: {
      out.payload = flat_merge(ctx, entry);
      break;
    }
    case TensorPath::kHybrid: {
      const Eigen::MatrixXd base =
          read_matrix(*ctx.base, entry.name, recipe.transpose_on_load);
      std::vector<Eigen::MatrixXd> experts;
      experts.reserve(ctx.others.size());
      for (const auto& other : ctx.others) {
        experts.push_back(read_matrix(*other, entry.name, recipe.transpose_on_load));
      }
      try {
        HybridResult h = hybrid_merge(base, experts, recipe.strategy, ctx.backend,
                                      entry.name, recipe.tolerances);
        out.report.diagnostics = std::move(h.diagnostics);
        if (recipe.emit == EmitKind::kRotations) {
          out.payload = encode_matrix(h.rotation->data(), entry.out_dtype, false);
        } else {
          out.payload =
              encode_matrix(h.merged, entry.out_dtype, recipe.transpose_on_load);
        }
      } catch (const Error& err) {
        if (err.code() != ErrorCode::kCayleyDomain ||
            recipe.on_cayley_domain != CayleyDomainPolicy::kSkipTensor) {
          throw;
        }
        mark_skipped(ctx, entry, err, out);
      }
      break;
    }
    case TensorPath::kOftMerge: {
      std::vector<RotationMatrix> rotations;
      rotations.reserve(ctx.others.size());
      const std::string adapter_name = oft_tensor_name(entry.name);
      for (const auto& other : ctx.others) {
        const SkewGenerator q = unpack_oft_generator(
            other->read(adapter_name), entry.rot_dim, recipe.block_size);
        rotations.push_back(cayley(q, recipe.tolerances));
      }
      try {
        OftMergeResult r = merge_oft(rotations, ctx.oft_strategy, recipe.tolerances);
        out.report.diagnostics = std::move(r.diagnostics);
        if (recipe.emit == EmitKind::kRotations) {
          out.payload = encode_matrix(r.matrix, entry.out_dtype, false);
        } else {
          const Eigen::MatrixXd base =
              read_matrix(*ctx.base, entry.name, recipe.transpose_on_load);
          const Eigen::MatrixXd merged = r.matrix * base;
          out.payload =
              encode_matrix(merged, entry.out_dtype, recipe.transpose_on_load);
        }
      } catch (const Error& err) {
        if (err.code() != ErrorCode::kCayleyDomain ||
            recipe.on_cayley_domain != CayleyDomainPolicy::kSkipTensor) {
          throw;
        }
        mark_skipped(ctx, entry, err, out);
      }
      break;
    }
    case TensorPath::kSkipped:
      break;  // never planned, only produced at run time
  }
  return out;
}

nlohmann::json diagnostics_to_json(const MergeDiagnostics& d) {
  nlohmann::json j;
  j["per_task_norms"] = d.per_task_norms;
  j["sum_norm"] = d.sum_norm;
  if (d.correction_factor) {
    j["correction_factor"] = *d.correction_factor;
  } else {
    j["correction_factor"] = "ZERO_SUM";
  }
  j["collapse_ratio"] = d.collapse_ratio;
  if (!d.block_factors.empty()) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& f : d.block_factors) {
      if (f) {
        blocks.push_back(*f);
      } else {
        blocks.push_back("ZERO_SUM");
      }
    }
    j["block_factors"] = std::move(blocks);
  }
  if (!d.degenerate_tasks.empty()) j["degenerate_tasks"] = d.degenerate_tasks;
  return j;
}

void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& doc) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw Error(ErrorCode::kIoError, "cannot write " + tmp.string());
    }
    out << doc.dump(2) << '\n';
    if (!out) {
      throw Error(ErrorCode::kIoError, "failed writing " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

// Runs process_entry over the plan with a small pool, delivering results to
// consume() strictly in plan order. In-flight results are bounded so memory
// stays proportional to the thread count.
template <typename Consume>
void run_pool(const RunContext& ctx, const std::vector<PlanEntry>& plan,
              int threads, Consume&& consume) {
  std::mutex mu;
  std::condition_variable cv;
  std::map<size_t, ProcessResult> done;
  std::atomic<size_t> next{0};
  size_t write_cursor = 0;
  bool stop = false;
  std::exception_ptr eptr;
  const size_t cap = static_cast<size_t>(threads) + 1;

  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= plan.size()) return;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return stop || i < write_cursor + cap; });
        if (stop) return;
      }
      try {
        ProcessResult result = process_entry(ctx, plan[i]);
        std::lock_guard lock(mu);
        done.emplace(i, std::move(result));
      } catch (...) {
        std::lock_guard lock(mu);
        if (!eptr) eptr = std::current_exception();
        stop = true;
      }
      cv.notify_all();
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);

  while (write_cursor < plan.size()) {
    ProcessResult result;
    {
      std::unique_lock lock(mu);
      cv.wait(lock, [&] { return stop || done.count(write_cursor) > 0; });
      auto it = done.find(write_cursor);
      if (it == done.end()) break;  // stopped on error
      result = std::move(it->second);
      done.erase(it);
    }
    consume(plan[write_cursor], std::move(result));
    ++write_cursor;
    cv.notify_all();
  }
  {
    std::lock_guard lock(mu);
    stop = true;
  }
  cv.notify_all();
  for (auto& t : pool) t.join();
  if (eptr) std::rethrow_exception(eptr);
}

}  // namespace

std::string_view tensor_path_name(TensorPath path) {
  switch (path) {
    case TensorPath::kOftMerge:
      return "oft_merge";
    case TensorPath::kHybrid:
      return "hybrid";
    case TensorPath::kEuclidean:
      return "euclidean";
    case TensorPath::kVector:
      return "vector";
    case TensorPath::kPassthrough:
      return "passthrough";
    case TensorPath::kSkipped:
      return "skipped";
  }
  return "unknown";
}

MergeOutcome run_merge(const MergeRecipe& recipe, const RunOptions& options) {
  RunContext ctx;
  ctx.recipe = &recipe;
  CheckpointReader base(recipe.base);
  ctx.base = &base;
  const auto& other_paths =
      method_uses_adapters(recipe.method) ? recipe.adapters : recipe.experts;
  for (const auto& p : other_paths) {
    ctx.others.push_back(std::make_unique<CheckpointReader>(p));
  }
  if (ctx.others.empty()) {
    throw Error(ErrorCode::kEmptyInput, "recipe lists no experts or adapters");
  }

  BackendSpec backend_spec = recipe.residual_backend;
  if (method_is_euclidean(recipe.method)) {
    backend_spec.kind = euclidean_kind_of(recipe.method);
  }
  const double default_lambda = recipe.method == MergeMethod::kDecouple
                                    ? 1.0 / static_cast<double>(ctx.others.size())
                                    : 1.0;
  ctx.backend = backend_spec.resolve(default_lambda, recipe.seed);
  if (method_uses_adapters(recipe.method)) {
    ctx.oft_strategy = strategy_for(recipe.method);
  }

  const std::vector<PlanEntry> plan = build_plan(ctx);

  MergeOutcome outcome;
  nlohmann::json tensor_docs = nlohmann::json::object();

  auto account = [&outcome, &tensor_docs](const TensorReport& report) {
    nlohmann::json doc;
    doc["path"] = std::string(tensor_path_name(report.path));
    if (report.diagnostics) {
      doc.update(diagnostics_to_json(*report.diagnostics));
    }
    if (!report.note.empty()) doc["note"] = report.note;
    tensor_docs[report.name] = std::move(doc);
    switch (report.path) {
      case TensorPath::kPassthrough:
        ++outcome.passthrough;
        break;
      case TensorPath::kSkipped:
        ++outcome.skipped;
        break;
      default:
        ++outcome.merged;
        break;
    }
    outcome.tensors.push_back(report);
  };

  if (options.dry_run) {
    for (const auto& entry : plan) {
      TensorReport report;
      report.name = entry.name;
      report.path = entry.path;
      account(report);
    }
  } else {
    std::vector<TensorWriteSpec> write_plan;
    for (const auto& entry : plan) {
      if (!entry.in_output) continue;
      write_plan.push_back(
          {entry.name, entry.out_dtype_name, entry.out_shape, entry.out_nbytes});
    }
    TensorFileWriter writer(
        recipe.output, std::move(write_plan),
        {{"producer", "orthomerge"},
         {"method", std::string(method_name(recipe.method))}});

    auto consume = [&](const PlanEntry& entry, ProcessResult result) {
      if (entry.in_output) writer.write(entry.name, result.payload);
      account(result.report);
    };

    if (options.threads <= 1) {
      for (const auto& entry : plan) {
        consume(entry, process_entry(ctx, entry));
      }
    } else {
      run_pool(ctx, plan, options.threads, consume);
    }
    writer.finalize();
    outcome.output_path = recipe.output;
  }

  nlohmann::json doc;
  doc["schema"] = "orthomerge.diagnostics/1";
  doc["dry_run"] = options.dry_run;
  doc["recipe"] = recipe_to_json(recipe);
  doc["summary"] = {{"tensors", plan.size()},
                    {"merged", outcome.merged},
                    {"passthrough", outcome.passthrough},
                    {"skipped", outcome.skipped}};
  doc["tensors"] = std::move(tensor_docs);
  outcome.diagnostics = std::move(doc);

  if (!options.dry_run) {
    const std::filesystem::path sidecar =
        recipe.diagnostics_path ? std::filesystem::path(*recipe.diagnostics_path)
                                : std::filesystem::path(recipe.output +
                                                        ".diagnostics.json");
    write_json_atomic(sidecar, outcome.diagnostics);
    outcome.diagnostics_path = sidecar;
  }
  return outcome;
}

}  // namespace orthomerge
