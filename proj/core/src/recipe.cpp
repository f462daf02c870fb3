// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#include "orthomerge/recipe.hpp"

#include <fmt/format.h>

#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include "orthomerge/errors.hpp"

namespace orthomerge {
namespace {

using nlohmann::json;

const std::map<std::string, MergeMethod>& method_table() {
  static const std::map<std::string, MergeMethod> table = {
      {"ortho_merge_oft", MergeMethod::kOrthoMergeOft},
      {"decouple", MergeMethod::kDecouple},
      {"ta", MergeMethod::kTaskArithmetic},
      {"ties", MergeMethod::kTies},
      {"dare", MergeMethod::kDare},
      {"simple_avg", MergeMethod::kSimpleAverage},
      {"ablation_simple_avg_r", MergeMethod::kAblationSimpleAvgR},
      {"ablation_seq_product_r", MergeMethod::kAblationSeqProductR},
      {"ablation_simple_avg_q", MergeMethod::kAblationSimpleAvgQ},
  };
  return table;
}

const std::map<std::string, EuclideanKind>& backend_table() {
  static const std::map<std::string, EuclideanKind> table = {
      {"ta", EuclideanKind::kTaskArithmetic},
      {"ties", EuclideanKind::kTies},
      {"dare", EuclideanKind::kDare},
      {"simple_avg", EuclideanKind::kSimpleAverage},
  };
  return table;
}

struct Checker {
  const json& doc;
  std::vector<std::string> problems;

  void require_keys(const json& obj, const std::string& where,
                    const std::set<std::string>& allowed) {
    for (const auto& [key, value] : obj.items()) {
      (void)value;
      if (!allowed.count(key)) {
        problems.push_back(fmt::format("{}: unknown key '{}'", where, key));
      }
    }
  }

  bool has(const char* key) const { return doc.contains(key); }

  template <typename Pred>
  void check(const json& obj, const std::string& where, const char* key, Pred pred,
             const char* expectation, bool required = false) {
    if (!obj.contains(key)) {
      if (required) problems.push_back(fmt::format("{}: missing required key '{}'", where, key));
      return;
    }
    if (!pred(obj[key])) {
      problems.push_back(fmt::format("{}.{}: {}", where, key, expectation));
    }
  }
};

bool is_string_array(const json& v) {
  if (!v.is_array()) return false;
  for (const auto& e : v) {
    if (!e.is_string()) return false;
  }
  return true;
}

bool is_fraction_01_closed(const json& v) {
  return v.is_number() && v.get<double>() > 0.0 && v.get<double>() <= 1.0;
}

}  // namespace

bool method_uses_adapters(MergeMethod method) {
  switch (method) {
    case MergeMethod::kOrthoMergeOft:
    case MergeMethod::kAblationSimpleAvgR:
    case MergeMethod::kAblationSeqProductR:
    case MergeMethod::kAblationSimpleAvgQ:
      return true;
    default:
      return false;
  }
}

bool method_is_euclidean(MergeMethod method) {
  switch (method) {
    case MergeMethod::kTaskArithmetic:
    case MergeMethod::kTies:
    case MergeMethod::kDare:
    case MergeMethod::kSimpleAverage:
      return true;
    default:
      return false;
  }
}

std::string_view method_name(MergeMethod method) {
  for (const auto& [name, m] : method_table()) {
    if (m == method) return name;
  }
  return "unknown";
}

EuclideanMethod BackendSpec::resolve(double default_lambda, uint64_t seed) const {
  EuclideanMethod m;
  m.kind = kind;
  m.lambda = lambda.value_or(default_lambda);
  m.ties_keep_fraction = ties_keep_fraction;
  m.dare_drop_prob = dare_drop_prob;
  m.seed = seed;
  return m;
}

std::vector<std::string> validate_recipe_json(const json& doc) {
  Checker c{doc, {}};
  if (!doc.is_object()) {
    return {"recipe: document must be a JSON object"};
  }
  c.require_keys(doc, "recipe",
                 {"method", "base", "experts", "adapters", "output", "diagnostics_path",
                  "strategy", "residual_backend", "include", "exclude", "block_size",
                  "tolerances", "seed", "transpose_on_load", "emit", "on_cayley_domain",
                  "output_dtype"});

  c.check(doc, "recipe", "method",
          [](const json& v) { return v.is_string() && method_table().count(v.get<std::string>()); },
          "must be one of ortho_merge_oft, decouple, ta, ties, dare, simple_avg, "
          "ablation_simple_avg_r, ablation_seq_product_r, ablation_simple_avg_q",
          /*required=*/true);
  c.check(doc, "recipe", "base",
          [](const json& v) { return v.is_string() && !v.get<std::string>().empty(); },
          "must be a non-empty path", /*required=*/true);
  c.check(doc, "recipe", "output",
          [](const json& v) { return v.is_string() && !v.get<std::string>().empty(); },
          "must be a non-empty path", /*required=*/true);
  c.check(doc, "recipe", "diagnostics_path",
          [](const json& v) { return v.is_string() && !v.get<std::string>().empty(); },
          "must be a non-empty path");
  c.check(doc, "recipe", "experts",
          [](const json& v) { return is_string_array(v) && !v.empty(); },
          "must be a non-empty array of paths");
  c.check(doc, "recipe", "adapters",
          [](const json& v) { return is_string_array(v) && !v.empty(); },
          "must be a non-empty array of paths");
  c.check(doc, "recipe", "strategy",
          [](const json& v) {
            return v.is_string() &&
                   (v.get<std::string>() == "global" || v.get<std::string>() == "conflict_aware");
          },
          "must be 'global' or 'conflict_aware'");
  c.check(doc, "recipe", "include", is_string_array, "must be an array of glob patterns");
  c.check(doc, "recipe", "exclude", is_string_array, "must be an array of glob patterns");
  c.check(doc, "recipe", "block_size",
          [](const json& v) {
            if (v.is_number_unsigned()) return v.get<uint64_t>() >= 1;
            return v.is_number_integer() && v.get<int64_t>() >= 1;
          },
          "must be an integer >= 1");
  c.check(doc, "recipe", "seed",
          [](const json& v) {
            return v.is_number_unsigned() ||
                   (v.is_number_integer() && v.get<int64_t>() >= 0);
          },
          "must be a non-negative integer");
  c.check(doc, "recipe", "transpose_on_load", [](const json& v) { return v.is_boolean(); },
          "must be a boolean");
  c.check(doc, "recipe", "emit",
          [](const json& v) {
            return v.is_string() &&
                   (v.get<std::string>() == "weights" || v.get<std::string>() == "rotations");
          },
          "must be 'weights' or 'rotations'");
  c.check(doc, "recipe", "on_cayley_domain",
          [](const json& v) {
            return v.is_string() &&
                   (v.get<std::string>() == "error" || v.get<std::string>() == "skip_tensor");
          },
          "must be 'error' or 'skip_tensor'");
  c.check(doc, "recipe", "output_dtype",
          [](const json& v) {
            if (!v.is_string()) return false;
            const auto s = v.get<std::string>();
            return s == "f16" || s == "bf16" || s == "f32" || s == "f64";
          },
          "must be one of f16, bf16, f32, f64");

  if (doc.contains("residual_backend")) {
    const json& rb = doc["residual_backend"];
    if (!rb.is_object()) {
      c.problems.push_back("recipe.residual_backend: must be an object");
    } else {
      c.require_keys(rb, "recipe.residual_backend",
                     {"kind", "lambda", "ties_keep_fraction", "dare_drop_prob"});
      c.check(rb, "recipe.residual_backend", "kind",
              [](const json& v) {
                return v.is_string() && backend_table().count(v.get<std::string>());
              },
              "must be one of ta, ties, dare, simple_avg");
      c.check(rb, "recipe.residual_backend", "lambda",
              [](const json& v) { return v.is_number() && v.get<double>() > 0.0; },
              "must be a number > 0");
      c.check(rb, "recipe.residual_backend", "ties_keep_fraction", is_fraction_01_closed,
              "must be a number in (0, 1]");
      c.check(rb, "recipe.residual_backend", "dare_drop_prob",
              [](const json& v) {
                return v.is_number() && v.get<double>() >= 0.0 && v.get<double>() < 1.0;
              },
              "must be a number in [0, 1)");
    }
  }

  if (doc.contains("tolerances")) {
    const json& t = doc["tolerances"];
    if (!t.is_object()) {
      c.problems.push_back("recipe.tolerances: must be an object");
    } else {
      c.require_keys(t, "recipe.tolerances", {"ortho_tol", "det_tol", "skew_tol"});
      for (const char* key : {"ortho_tol", "det_tol", "skew_tol"}) {
        c.check(t, "recipe.tolerances", key,
                [](const json& v) { return v.is_number() && v.get<double>() > 0.0; },
                "must be a number > 0");
      }
    }
  }

  // Cross-field requirements.
  if (doc.contains("method") && doc["method"].is_string() &&
      method_table().count(doc["method"].get<std::string>())) {
    const MergeMethod method = method_table().at(doc["method"].get<std::string>());
    if (method_uses_adapters(method)) {
      if (!doc.contains("adapters")) {
        c.problems.push_back(
            fmt::format("recipe: method '{}' requires 'adapters'", method_name(method)));
      }
    } else if (!doc.contains("experts")) {
      c.problems.push_back(
          fmt::format("recipe: method '{}' requires 'experts'", method_name(method)));
    }
    if (method_is_euclidean(method) && doc.contains("emit") && doc["emit"].is_string() &&
        doc["emit"].get<std::string>() == "rotations") {
      c.problems.push_back(fmt::format(
          "recipe.emit: method '{}' produces no rotations", method_name(method)));
    }
    if (doc.contains("residual_backend") && doc["residual_backend"].is_object() &&
        doc["residual_backend"].contains("kind") &&
        doc["residual_backend"]["kind"].is_string() && method_is_euclidean(method)) {
      const auto kind = doc["residual_backend"]["kind"].get<std::string>();
      if (backend_table().count(kind) &&
          backend_table().at(kind) != backend_table().at(std::string(method_name(method)))) {
        c.problems.push_back(
            fmt::format("recipe.residual_backend.kind: '{}' contradicts method '{}'", kind,
                        method_name(method)));
      }
    }
  }
  return std::move(c.problems);
}

MergeRecipe parse_recipe(const json& doc) {
  const auto problems = validate_recipe_json(doc);
  if (!problems.empty()) {
    std::string joined;
    for (const auto& p : problems) {
      joined += (joined.empty() ? "" : "; ") + p;
    }
    throw Error(ErrorCode::kRecipeInvalid, joined);
  }
  MergeRecipe r;
  r.method = method_table().at(doc["method"].get<std::string>());
  r.base = doc["base"].get<std::string>();
  if (doc.contains("experts")) r.experts = doc["experts"].get<std::vector<std::string>>();
  if (doc.contains("adapters")) r.adapters = doc["adapters"].get<std::vector<std::string>>();
  r.output = doc["output"].get<std::string>();
  if (doc.contains("diagnostics_path")) r.diagnostics_path = doc["diagnostics_path"].get<std::string>();
  if (doc.contains("strategy")) {
    r.strategy = doc["strategy"].get<std::string>() == "conflict_aware"
                     ? DecoupleStrategy::kConflictAware
                     : DecoupleStrategy::kGlobal;
  }
  if (doc.contains("residual_backend")) {
    const json& rb = doc["residual_backend"];
    if (rb.contains("kind")) r.residual_backend.kind = backend_table().at(rb["kind"].get<std::string>());
    if (rb.contains("lambda")) r.residual_backend.lambda = rb["lambda"].get<double>();
    if (rb.contains("ties_keep_fraction"))
      r.residual_backend.ties_keep_fraction = rb["ties_keep_fraction"].get<double>();
    if (rb.contains("dare_drop_prob"))
      r.residual_backend.dare_drop_prob = rb["dare_drop_prob"].get<double>();
  }
  if (method_is_euclidean(r.method)) {
    r.residual_backend.kind = backend_table().at(std::string(method_name(r.method)));
  }
  if (doc.contains("include")) r.include = doc["include"].get<std::vector<std::string>>();
  if (doc.contains("exclude")) r.exclude = doc["exclude"].get<std::vector<std::string>>();
  if (doc.contains("block_size")) r.block_size = doc["block_size"].get<int64_t>();
  if (doc.contains("tolerances")) {
    const json& t = doc["tolerances"];
    if (t.contains("ortho_tol")) r.tolerances.ortho_tol = t["ortho_tol"].get<double>();
    if (t.contains("det_tol")) r.tolerances.det_tol = t["det_tol"].get<double>();
    if (t.contains("skew_tol")) r.tolerances.skew_tol = t["skew_tol"].get<double>();
  }
  if (doc.contains("seed")) r.seed = doc["seed"].get<uint64_t>();
  if (doc.contains("transpose_on_load")) r.transpose_on_load = doc["transpose_on_load"].get<bool>();
  if (doc.contains("emit")) {
    r.emit = doc["emit"].get<std::string>() == "rotations" ? EmitKind::kRotations
                                                           : EmitKind::kWeights;
  }
  if (doc.contains("on_cayley_domain")) {
    r.on_cayley_domain = doc["on_cayley_domain"].get<std::string>() == "skip_tensor"
                             ? CayleyDomainPolicy::kSkipTensor
                             : CayleyDomainPolicy::kError;
  }
  if (doc.contains("output_dtype")) {
    const auto s = doc["output_dtype"].get<std::string>();
    if (s == "f16") r.output_dtype = Dtype::kF16;
    if (s == "bf16") r.output_dtype = Dtype::kBF16;
    if (s == "f32") r.output_dtype = Dtype::kF32;
    if (s == "f64") r.output_dtype = Dtype::kF64;
  }
  return r;
}

MergeRecipe load_recipe(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kIoError, fmt::format("cannot open recipe {}", path.string()));
  }
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) {
    throw Error(ErrorCode::kRecipeInvalid, fmt::format("{} is not valid JSON", path.string()));
  }
  return parse_recipe(doc);
}

nlohmann::json recipe_to_json(const MergeRecipe& r) {
  json rb = {
      {"kind", [&] {
         for (const auto& [name, kind] : backend_table()) {
           if (kind == r.residual_backend.kind) return name;
         }
         return std::string("ta");
       }()},
      {"ties_keep_fraction", r.residual_backend.ties_keep_fraction},
      {"dare_drop_prob", r.residual_backend.dare_drop_prob},
  };
  if (r.residual_backend.lambda) rb["lambda"] = *r.residual_backend.lambda;

  json doc = {
      {"method", std::string(method_name(r.method))},
      {"base", r.base},
      {"output", r.output},
      {"strategy", r.strategy == DecoupleStrategy::kConflictAware ? "conflict_aware" : "global"},
      {"residual_backend", rb},
      {"include", r.include},
      {"exclude", r.exclude},
      {"tolerances",
       {{"ortho_tol", r.tolerances.ortho_tol},
        {"det_tol", r.tolerances.det_tol},
        {"skew_tol", r.tolerances.skew_tol}}},
      {"seed", r.seed},
      {"transpose_on_load", r.transpose_on_load},
      {"emit", r.emit == EmitKind::kRotations ? "rotations" : "weights"},
      {"on_cayley_domain",
       r.on_cayley_domain == CayleyDomainPolicy::kSkipTensor ? "skip_tensor" : "error"},
  };
  if (!r.experts.empty()) doc["experts"] = r.experts;
  if (!r.adapters.empty()) doc["adapters"] = r.adapters;
  if (r.diagnostics_path) doc["diagnostics_path"] = *r.diagnostics_path;
  if (r.block_size) doc["block_size"] = static_cast<int64_t>(*r.block_size);
  if (r.output_dtype) {
    std::string s(dtype_name(*r.output_dtype));
    for (auto& ch : s) ch = static_cast<char>(std::tolower(ch));
    doc["output_dtype"] = s;
  }
  return doc;
}

bool glob_match(std::string_view pattern, std::string_view name) {
  size_t p = 0;
  size_t n = 0;
  size_t star = std::string_view::npos;
  size_t star_n = 0;
  while (n < name.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == name[n])) {
      ++p;
      ++n;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      star_n = n;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      n = ++star_n;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

bool name_selected(const MergeRecipe& recipe, const std::string& name) {
  bool included = false;
  for (const auto& pat : recipe.include) {
    if (glob_match(pat, name)) {
      included = true;
      break;
    }
  }
  if (!included) return false;
  for (const auto& pat : recipe.exclude) {
    if (glob_match(pat, name)) return false;
  }
  return true;
}

}  // namespace orthomerge
