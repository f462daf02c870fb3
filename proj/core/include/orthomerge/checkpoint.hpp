// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "orthomerge/tensor_file.hpp"

namespace orthomerge {

// A checkpoint is either a single tensor container or an index JSON of the
// form {"weight_map": {"tensor.name": "shard-file", ...}} with shard paths
// resolved relative to the index file. Tensors are read lazily, one at a
// time; concurrent reads are safe.
class CheckpointReader {
 public:
  explicit CheckpointReader(const std::filesystem::path& path);

  const std::map<std::string, TensorInfo>& manifest() const { return manifest_; }
  bool contains(const std::string& name) const { return shard_of_.count(name) > 0; }
  TensorRecord read(const std::string& name) const;
  const std::filesystem::path& path() const { return path_; }

  // The reader for the shard holding name (for adapter lookups).
  const TensorFileReader& shard_for(const std::string& name) const;

 private:
  std::filesystem::path path_;
  std::vector<std::unique_ptr<TensorFileReader>> shards_;
  std::map<std::string, size_t> shard_of_;
  std::map<std::string, TensorInfo> manifest_;
};

}  // namespace orthomerge
