// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#include "orthomerge/oft_adapter.hpp"

#include <fmt/format.h>

#include <cmath>

#include "orthomerge/errors.hpp"

namespace orthomerge {
namespace {

// Solves len = b*(b-1)/2 for b, or returns 0 when len is not triangular.
Eigen::Index block_dim_from_packed(int64_t len) {
  if (len == 0) return 1;
  const auto root = static_cast<int64_t>(std::llround(std::sqrt(8.0 * static_cast<double>(len) + 1.0)));
  if (root * root != 8 * len + 1) return 0;
  return static_cast<Eigen::Index>((1 + root) / 2);
}

}  // namespace

SkewGenerator unpack_oft_generator(const TensorRecord& record, Eigen::Index d_in,
                                   std::optional<Eigen::Index> expected_block_size) {
  if (record.shape().size() != 2) {
    throw Error(ErrorCode::kBadBlockLayout,
                fmt::format("adapter tensor must be rank 2 [num_blocks, packed], got rank {}",
                            record.shape().size()));
  }
  const auto num_blocks = static_cast<Eigen::Index>(record.shape()[0]);
  const int64_t packed_len = record.shape()[1];
  const Eigen::Index b = block_dim_from_packed(packed_len);
  if (num_blocks < 1 || b == 0) {
    throw Error(ErrorCode::kBadBlockLayout,
                fmt::format("packed length {} is not a triangular number", packed_len));
  }
  if (num_blocks * b != d_in) {
    throw Error(ErrorCode::kBadBlockLayout,
                fmt::format("{} blocks of size {} cover {}, but d_in is {}", num_blocks,
                            b, num_blocks * b, d_in));
  }
  if (expected_block_size && *expected_block_size != b) {
    throw Error(ErrorCode::kBadBlockLayout,
                fmt::format("adapter block size {} contradicts the requested {}", b,
                            *expected_block_size));
  }
  const Eigen::MatrixXd packed = record.to_matrix();  // [num_blocks, packed_len]
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(d_in, d_in);
  for (Eigen::Index m = 0; m < num_blocks; ++m) {
    const Eigen::Index off = m * b;
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < b; ++i) {
      for (Eigen::Index j = i + 1; j < b; ++j, ++k) {
        const double v = packed(m, k);
        q(off + i, off + j) = v;
        q(off + j, off + i) = -v;
      }
    }
  }
  const std::optional<Eigen::Index> block =
      num_blocks > 1 ? std::optional<Eigen::Index>(b) : std::nullopt;
  return SkewGenerator(std::move(q), block);
}

TensorRecord pack_oft_generator(const SkewGenerator& q, Dtype dtype) {
  const Eigen::Index d = q.dim();
  const Eigen::Index b = q.block_size().value_or(d);
  const Eigen::Index num_blocks = d / b;
  const Eigen::Index packed_len = b * (b - 1) / 2;
  Eigen::MatrixXd packed(num_blocks, packed_len);
  for (Eigen::Index m = 0; m < num_blocks; ++m) {
    const Eigen::Index off = m * b;
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < b; ++i) {
      for (Eigen::Index j = i + 1; j < b; ++j, ++k) {
        packed(m, k) = q.data()(off + i, off + j);
      }
    }
  }
  return TensorRecord::from_matrix(packed, dtype);
}

SkewGenerator load_oft_generator(const TensorFileReader& adapter,
                                 const std::string& base_tensor, Eigen::Index d_in,
                                 std::optional<Eigen::Index> expected_block_size) {
  const std::string name = oft_tensor_name(base_tensor);
  if (!adapter.contains(name)) {
    throw Error(ErrorCode::kBadBlockLayout,
                fmt::format("adapter {} does not cover tensor {}", adapter.path().string(),
                            base_tensor));
  }
  return unpack_oft_generator(adapter.read(name), d_in, expected_block_size);
}

}  // namespace orthomerge
