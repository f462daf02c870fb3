// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "orthomerge/manifold.hpp"
#include "orthomerge/recipe.hpp"

namespace orthomerge {

// Processing route taken by one tensor during a merge run.
enum class TensorPath {
  kOftMerge,     // adapter generators combined on the rotation manifold
  kHybrid,       // rotation + residual decomposition against the base
  kEuclidean,    // whole tensor combined entrywise
  kVector,       // non-matrix float tensor, combined entrywise
  kPassthrough,  // base bytes copied unchanged
  kSkipped,      // Cayley domain failure under the skip policy
};

std::string_view tensor_path_name(TensorPath path);

struct TensorReport {
  std::string name;
  TensorPath path = TensorPath::kPassthrough;
  std::optional<MergeDiagnostics> diagnostics;
  std::string note;
};

struct RunOptions {
  int threads = 1;
  bool dry_run = false;  // plan and classify from manifests, write nothing
};

struct MergeOutcome {
  std::vector<TensorReport> tensors;
  int merged = 0;
  int passthrough = 0;
  int skipped = 0;
  std::filesystem::path output_path;       // empty on dry runs
  std::filesystem::path diagnostics_path;  // empty on dry runs
  nlohmann::json diagnostics;              // the sidecar document
};

// Executes a validated recipe: plans the output from the checkpoint
// manifests, streams tensors one at a time (or threads at a time), and
// writes the merged container plus a diagnostics JSON sidecar. Results are
// byte-identical for a given recipe regardless of thread count.
MergeOutcome run_merge(const MergeRecipe& recipe, const RunOptions& options = {});

}  // namespace orthomerge
