// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "orthomerge/manifold.hpp"
#include "orthomerge/tensor_file.hpp"

namespace orthomerge {

// Adapter files store one packed generator per covered base tensor under the
// name "<base_tensor>.oft_q", shape [num_blocks, b*(b-1)/2]: the strict upper
// triangle of each b x b block in row-major order (i < j, i ascending, then
// j), with Q[i][j] = v[k] and Q[j][i] = -v[k]. The block size b is recovered
// from the packed length and validated against num_blocks * b == d_in;
// num_blocks == 1 yields a full (unblocked) generator.

inline constexpr std::string_view kOftSuffix = ".oft_q";

inline std::string oft_tensor_name(const std::string& base_tensor) {
  return base_tensor + std::string(kOftSuffix);
}

// Reconstructs the skew generator for base_tensor from an adapter record.
// expected_block_size, when given (e.g. from a recipe), must match the
// derived block size. Throws BAD_BLOCK_LAYOUT on any inconsistency.
SkewGenerator unpack_oft_generator(const TensorRecord& record, Eigen::Index d_in,
                                   std::optional<Eigen::Index> expected_block_size = {});

// Packs a generator into adapter storage form (inverse of the above).
TensorRecord pack_oft_generator(const SkewGenerator& q, Dtype dtype);

// Convenience: locate and unpack the generator for base_tensor in an adapter
// file; throws BAD_BLOCK_LAYOUT when the adapter does not cover the tensor.
SkewGenerator load_oft_generator(const TensorFileReader& adapter,
                                 const std::string& base_tensor, Eigen::Index d_in,
                                 std::optional<Eigen::Index> expected_block_size = {});

}  // namespace orthomerge
