// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#include "orthomerge/checkpoint.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "orthomerge/errors.hpp"

namespace orthomerge {
namespace {

bool looks_like_index(const std::filesystem::path& path) {
  return path.extension() == ".json";
}

}  // namespace

CheckpointReader::CheckpointReader(const std::filesystem::path& path) : path_(path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kIoError, "checkpoint not found: " + path.string());
  }
  if (looks_like_index(path)) {
    std::ifstream in(path);
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kMalformedHeader,
                  "checkpoint index is not valid JSON: " + std::string(e.what()));
    }
    if (!doc.is_object() || !doc.contains("weight_map") || !doc["weight_map"].is_object()) {
      throw Error(ErrorCode::kMalformedHeader,
                  "checkpoint index must be an object with a weight_map object");
    }
    const auto dir = path.parent_path();
    std::map<std::string, size_t> shard_index;
    for (const auto& [tensor, shard] : doc["weight_map"].items()) {
      if (!shard.is_string()) {
        throw Error(ErrorCode::kMalformedHeader,
                    "weight_map values must be shard file names");
      }
      const std::string shard_name = shard.get<std::string>();
      auto it = shard_index.find(shard_name);
      if (it == shard_index.end()) {
        shards_.push_back(std::make_unique<TensorFileReader>(dir / shard_name));
        it = shard_index.emplace(shard_name, shards_.size() - 1).first;
      }
      const TensorFileReader& reader = *shards_[it->second];
      auto entry = reader.tensors().find(tensor);
      if (entry == reader.tensors().end()) {
        throw Error(ErrorCode::kMalformedHeader,
                    "index maps " + tensor + " to " + shard_name +
                        " but the shard does not contain it");
      }
      shard_of_[tensor] = it->second;
      manifest_[tensor] = entry->second;
    }
  } else {
    shards_.push_back(std::make_unique<TensorFileReader>(path));
    const TensorFileReader& reader = *shards_.front();
    for (const auto& [name, info] : reader.tensors()) {
      shard_of_[name] = 0;
      manifest_[name] = info;
    }
  }
}

TensorRecord CheckpointReader::read(const std::string& name) const {
  auto it = shard_of_.find(name);
  if (it == shard_of_.end()) {
    throw Error(ErrorCode::kIoError, "tensor not in checkpoint: " + name);
  }
  return shards_[it->second]->read(name);
}

const TensorFileReader& CheckpointReader::shard_for(const std::string& name) const {
  auto it = shard_of_.find(name);
  if (it == shard_of_.end()) {
    throw Error(ErrorCode::kIoError, "tensor not in checkpoint: " + name);
  }
  return *shards_[it->second];
}

}  // namespace orthomerge
