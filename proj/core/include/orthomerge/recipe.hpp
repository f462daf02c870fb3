// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "orthomerge/decouple.hpp"
#include "orthomerge/euclidean.hpp"
#include "orthomerge/manifold.hpp"
#include "orthomerge/tensor_file.hpp"

namespace orthomerge {

enum class MergeMethod {
  kOrthoMergeOft,        // magnitude-corrected generator merge of OFT adapters
  kDecouple,             // hybrid rotation + residual pipeline
  kTaskArithmetic,
  kTies,
  kDare,
  kSimpleAverage,
  kAblationSimpleAvgR,   // plain rotation average (non-orthogonal)
  kAblationSeqProductR,  // ordered rotation product
  kAblationSimpleAvgQ,   // plain generator average, no magnitude correction
};

bool method_uses_adapters(MergeMethod method);
bool method_is_euclidean(MergeMethod method);
std::string_view method_name(MergeMethod method);

enum class EmitKind { kWeights, kRotations };
enum class CayleyDomainPolicy { kError, kSkipTensor };

struct BackendSpec {
  EuclideanKind kind = EuclideanKind::kTaskArithmetic;
  std::optional<double> lambda;  // default: 1.0 standalone, 1/N on residuals
  double ties_keep_fraction = 0.2;
  double dare_drop_prob = 0.9;

  // Resolves to a runnable method; default_lambda supplies the contextual
  // default when none was given.
  EuclideanMethod resolve(double default_lambda, uint64_t seed) const;
};

// Declarative merge job. Validated against docs/recipe.schema.json semantics
// before any tensor data is read.
struct MergeRecipe {
  MergeMethod method = MergeMethod::kDecouple;
  std::string base;
  std::vector<std::string> experts;   // weight checkpoints (non-adapter methods)
  std::vector<std::string> adapters;  // OFT adapter files (adapter methods)
  std::string output;
  std::optional<std::string> diagnostics_path;  // default: output + ".diagnostics.json"

  DecoupleStrategy strategy = DecoupleStrategy::kGlobal;
  BackendSpec residual_backend;  // also the hyperparameter source for
                                 // standalone Euclidean methods
  std::vector<std::string> include{"*"};
  std::vector<std::string> exclude;
  std::optional<Eigen::Index> block_size;
  Tolerances tolerances;
  uint64_t seed = 0;
  bool transpose_on_load = false;
  EmitKind emit = EmitKind::kWeights;
  CayleyDomainPolicy on_cayley_domain = CayleyDomainPolicy::kError;
  std::optional<Dtype> output_dtype;  // absent: mirror the base dtype per tensor
};

// Returns every schema violation found (empty = valid).
std::vector<std::string> validate_recipe_json(const nlohmann::json& doc);

// Parses and validates; throws RECIPE_INVALID listing all problems.
MergeRecipe parse_recipe(const nlohmann::json& doc);
MergeRecipe load_recipe(const std::filesystem::path& path);

// Serializes the fully resolved recipe (defaults included) back to JSON for
// the diagnostics sidecar; stable key order.
nlohmann::json recipe_to_json(const MergeRecipe& recipe);

// Shell-style tensor name matching: '*' matches any run (including '.'),
// '?' matches one character.
bool glob_match(std::string_view pattern, std::string_view name);
bool name_selected(const MergeRecipe& recipe, const std::string& name);

}  // namespace orthomerge
