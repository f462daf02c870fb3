// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace orthomerge {

// Tensor container, wire-compatible with the safetensors layout:
//
//   [u64 little-endian header length n][UTF-8 JSON header, n bytes][data]
//
// The header maps tensor names to {"dtype", "shape", "data_offsets"} with
// offsets relative to the start of the data section, plus an optional
// "__metadata__" string map. Loading validates the header strictly: exact
// key sets, in-range non-overlapping offsets, and byte lengths that match
// shape x dtype width. Payloads stay raw little-endian bytes until numeric
// conversion is requested, so unsupported-for-compute dtypes still pass
// through bit-exactly. All numeric conversion is 64-bit; storing narrows
// with round-to-nearest-even (f64 -> f32 -> f16/bf16).

enum class Dtype { kF16, kBF16, kF32, kF64 };

std::string_view dtype_name(Dtype dtype);
size_t dtype_size(Dtype dtype);
// Width of any standard container dtype string, or nullopt if unknown.
std::optional<size_t> dtype_width(const std::string& name);
// Parses one of the four floating dtypes; throws UNSUPPORTED_DTYPE otherwise.
Dtype parse_float_dtype(const std::string& name);

// Process-wide accounting of live tensor payload bytes; lets tests assert the
// streaming pipeline's memory profile. Tracks container payloads only, not
// compute temporaries.
struct MemoryGauge {
  static std::atomic<int64_t> current;
  static std::atomic<int64_t> peak;
  static void add(int64_t bytes);
  static void sub(int64_t bytes);
  static void reset_peak();
};

class TensorRecord {
 public:
  TensorRecord() = default;
  TensorRecord(std::string dtype, std::vector<int64_t> shape,
               std::vector<std::byte> payload);
  TensorRecord(const TensorRecord& other);
  TensorRecord& operator=(const TensorRecord& other);
  TensorRecord(TensorRecord&& other) noexcept;
  TensorRecord& operator=(TensorRecord&& other) noexcept;
  ~TensorRecord();

  const std::string& dtype() const { return dtype_; }
  const std::vector<int64_t>& shape() const { return shape_; }
  const std::vector<std::byte>& payload() const { return payload_; }
  int64_t numel() const;
  bool is_float() const;

  // Row-major decode of a rank-2 tensor to a dense f64 matrix.
  Eigen::MatrixXd to_matrix() const;
  // Decode of a tensor of any rank to a flat f64 vector, row-major order.
  Eigen::VectorXd to_vector() const;

  static TensorRecord from_matrix(const Eigen::MatrixXd& m, Dtype dtype);
  static TensorRecord from_vector(const Eigen::VectorXd& v,
                                  const std::vector<int64_t>& shape, Dtype dtype);

 private:
  void gauge_add();
  void gauge_sub();

  std::string dtype_ = "F64";
  std::vector<int64_t> shape_;
  std::vector<std::byte> payload_;
};

struct TensorInfo {
  std::string dtype;
  std::vector<int64_t> shape;
  uint64_t begin = 0;  // offsets into the data section
  uint64_t end = 0;
};

// Lazy reader: parses and validates the header once, then serves tensors on
// demand. read() opens its own stream, so concurrent reads are safe.
class TensorFileReader {
 public:
  explicit TensorFileReader(std::filesystem::path path);

  const std::map<std::string, TensorInfo>& tensors() const { return tensors_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }
  const std::filesystem::path& path() const { return path_; }
  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }

  TensorRecord read(const std::string& name) const;

 private:
  std::filesystem::path path_;
  uint64_t data_start_ = 0;
  uint64_t data_size_ = 0;
  std::map<std::string, TensorInfo> tensors_;
  std::map<std::string, std::string> metadata_;
};

struct TensorWriteSpec {
  std::string name;
  std::string dtype;
  std::vector<int64_t> shape;
  uint64_t nbytes = 0;
};

// Streaming writer. The full layout is declared up front so the header can be
// emitted first; payloads must then arrive in the declared (sorted) order.
// Data goes to "<path>.tmp" and is renamed into place by finalize(); an
// abandoned writer removes the temporary.
class TensorFileWriter {
 public:
  TensorFileWriter(std::filesystem::path path, std::vector<TensorWriteSpec> plan,
                   std::map<std::string, std::string> metadata = {});
  ~TensorFileWriter();

  TensorFileWriter(const TensorFileWriter&) = delete;
  TensorFileWriter& operator=(const TensorFileWriter&) = delete;

  void write(const std::string& name, const std::vector<std::byte>& payload);
  void finalize();

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_path_;
  std::vector<TensorWriteSpec> plan_;
  std::ofstream stream_;
  size_t next_ = 0;
  bool finalized_ = false;
};

// Eager whole-file view, convenient for fixtures and tests.
struct TensorFile {
  std::map<std::string, TensorRecord> tensors;
  std::map<std::string, std::string> metadata;
};

TensorFile load_tensor_file(const std::filesystem::path& path);
void store_tensor_file(const std::filesystem::path& path, const TensorFile& file);

// Scalar conversions used for storage narrowing; round-to-nearest-even.
uint16_t f32_to_f16_bits(float value);
float f16_bits_to_f32(uint16_t bits);
uint16_t f32_to_bf16_bits(float value);
float bf16_bits_to_f32(uint16_t bits);

}  // namespace orthomerge
