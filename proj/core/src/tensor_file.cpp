// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#include "orthomerge/tensor_file.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <utility>

#include "orthomerge/errors.hpp"

namespace orthomerge {
namespace {

using nlohmann::json;

constexpr uint64_t kMaxHeaderBytes = 100ull * 1024 * 1024;

const std::map<std::string, size_t>& standard_dtype_widths() {
  static const std::map<std::string, size_t> widths = {
      {"F64", 8}, {"F32", 4}, {"F16", 2}, {"BF16", 2}, {"I64", 8}, {"I32", 4},
      {"I16", 2}, {"I8", 1},  {"U64", 8}, {"U32", 4},  {"U16", 2}, {"U8", 1},
      {"BOOL", 1},
  };
  return widths;
}

uint64_t read_u64_le(const std::byte* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<uint64_t>(p[i]);
  return v;
}

void write_u64_le(std::ofstream& os, uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(bytes, 8);
}

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

double payload_read_f64(const std::byte* p, Dtype dtype, int64_t i) {
  switch (dtype) {
    case Dtype::kF64: {
      double v;
      std::memcpy(&v, p + 8 * i, 8);
      return v;
    }
    case Dtype::kF32: {
      float v;
      std::memcpy(&v, p + 4 * i, 4);
      return static_cast<double>(v);
    }
    case Dtype::kF16: {
      uint16_t bits;
      std::memcpy(&bits, p + 2 * i, 2);
      return static_cast<double>(f16_bits_to_f32(bits));
    }
    case Dtype::kBF16: {
      uint16_t bits;
      std::memcpy(&bits, p + 2 * i, 2);
      return static_cast<double>(bf16_bits_to_f32(bits));
    }
  }
  throw Error(ErrorCode::kUnsupportedDtype, "unreachable dtype");
}

void payload_write_f64(std::byte* p, Dtype dtype, int64_t i, double value) {
  switch (dtype) {
    case Dtype::kF64:
      std::memcpy(p + 8 * i, &value, 8);
      return;
    case Dtype::kF32: {
      const float v = static_cast<float>(value);
      std::memcpy(p + 4 * i, &v, 4);
      return;
    }
    case Dtype::kF16: {
      const uint16_t bits = f32_to_f16_bits(static_cast<float>(value));
      std::memcpy(p + 2 * i, &bits, 2);
      return;
    }
    case Dtype::kBF16: {
      const uint16_t bits = f32_to_bf16_bits(static_cast<float>(value));
      std::memcpy(p + 2 * i, &bits, 2);
      return;
    }
  }
}

}  // namespace

std::string_view dtype_name(Dtype dtype) {
  switch (dtype) {
    case Dtype::kF16: return "F16";
    case Dtype::kBF16: return "BF16";
    case Dtype::kF32: return "F32";
    case Dtype::kF64: return "F64";
  }
  return "F64";
}

size_t dtype_size(Dtype dtype) {
  switch (dtype) {
    case Dtype::kF16:
    case Dtype::kBF16: return 2;
    case Dtype::kF32: return 4;
    case Dtype::kF64: return 8;
  }
  return 8;
}

std::optional<size_t> dtype_width(const std::string& name) {
  const auto& widths = standard_dtype_widths();
  const auto it = widths.find(name);
  if (it == widths.end()) return std::nullopt;
  return it->second;
}

Dtype parse_float_dtype(const std::string& name) {
  if (name == "F16") return Dtype::kF16;
  if (name == "BF16") return Dtype::kBF16;
  if (name == "F32") return Dtype::kF32;
  if (name == "F64") return Dtype::kF64;
  throw Error(ErrorCode::kUnsupportedDtype,
              fmt::format("dtype {} has no 64-bit numeric decoding", name));
}

// ---------------------------------------------------------------------------
// Half-precision conversions (round-to-nearest-even).

uint16_t f32_to_f16_bits(float value) {
  const uint32_t bits = std::bit_cast<uint32_t>(value);
  const uint32_t sign = (bits >> 16) & 0x8000u;
  const uint32_t exp = (bits >> 23) & 0xffu;
  uint32_t mant = bits & 0x7fffffu;

  if (exp == 0xffu) {  // inf / nan
    return static_cast<uint16_t>(sign | 0x7c00u | (mant ? 0x200u | (mant >> 13) : 0u));
  }
  const int32_t unbiased = static_cast<int32_t>(exp) - 127;
  if (unbiased > 15) {  // overflow -> inf
    return static_cast<uint16_t>(sign | 0x7c00u);
  }
  if (unbiased >= -14) {  // normal range
    uint32_t out = ((static_cast<uint32_t>(unbiased + 15)) << 10) | (mant >> 13);
    const uint32_t rest = mant & 0x1fffu;
    if (rest > 0x1000u || (rest == 0x1000u && (out & 1u))) ++out;
    return static_cast<uint16_t>(sign | out);
  }
  if (unbiased < -25) {  // underflow -> signed zero
    return static_cast<uint16_t>(sign);
  }
  // Subnormal: shift the implicit leading 1 into the mantissa.
  mant |= 0x800000u;
  const int shift = -unbiased - 14 + 13;  // 14..24
  uint32_t out = mant >> shift;
  const uint32_t rest = mant & ((1u << shift) - 1u);
  const uint32_t half = 1u << (shift - 1);
  if (rest > half || (rest == half && (out & 1u))) ++out;
  return static_cast<uint16_t>(sign | out);
}

float f16_bits_to_f32(uint16_t bits) {
  const uint32_t sign = (static_cast<uint32_t>(bits) & 0x8000u) << 16;
  const uint32_t exp = (bits >> 10) & 0x1fu;
  const uint32_t mant = bits & 0x3ffu;
  uint32_t out;
  if (exp == 0) {
    if (mant == 0) {
      out = sign;
    } else {  // subnormal: renormalize
      int e = -1;
      uint32_t m = mant;
      do {
        ++e;
        m <<= 1;
      } while ((m & 0x400u) == 0);
      out = sign | (static_cast<uint32_t>(127 - 15 - e) << 23) | ((m & 0x3ffu) << 13);
    }
  } else if (exp == 0x1fu) {
    out = sign | 0x7f800000u | (mant << 13);
  } else {
    out = sign | ((exp - 15 + 127) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(out);
}

uint16_t f32_to_bf16_bits(float value) {
  uint32_t bits = std::bit_cast<uint32_t>(value);
  if ((bits & 0x7f800000u) == 0x7f800000u && (bits & 0x7fffffu)) {
    return static_cast<uint16_t>((bits >> 16) | 0x40u);  // quiet the nan
  }
  const uint32_t rest = bits & 0xffffu;
  uint32_t out = bits >> 16;
  if (rest > 0x8000u || (rest == 0x8000u && (out & 1u))) ++out;
  return static_cast<uint16_t>(out);
}

float bf16_bits_to_f32(uint16_t bits) {
  return std::bit_cast<float>(static_cast<uint32_t>(bits) << 16);
}

// ---------------------------------------------------------------------------
// MemoryGauge

std::atomic<int64_t> MemoryGauge::current{0};
std::atomic<int64_t> MemoryGauge::peak{0};

void MemoryGauge::add(int64_t bytes) {
  const int64_t now = current.fetch_add(bytes) + bytes;
  int64_t seen = peak.load();
  while (now > seen && !peak.compare_exchange_weak(seen, now)) {
  }
}

void MemoryGauge::sub(int64_t bytes) { current.fetch_sub(bytes); }

void MemoryGauge::reset_peak() { peak.store(current.load()); }

// ---------------------------------------------------------------------------
// TensorRecord

TensorRecord::TensorRecord(std::string dtype, std::vector<int64_t> shape,
                           std::vector<std::byte> payload)
    : dtype_(std::move(dtype)), shape_(std::move(shape)), payload_(std::move(payload)) {
  gauge_add();
}

TensorRecord::TensorRecord(const TensorRecord& other)
    : dtype_(other.dtype_), shape_(other.shape_), payload_(other.payload_) {
  gauge_add();
}

TensorRecord& TensorRecord::operator=(const TensorRecord& other) {
  if (this != &other) {
    gauge_sub();
    dtype_ = other.dtype_;
    shape_ = other.shape_;
    payload_ = other.payload_;
    gauge_add();
  }
  return *this;
}

TensorRecord::TensorRecord(TensorRecord&& other) noexcept
    : dtype_(std::move(other.dtype_)),
      shape_(std::move(other.shape_)),
      payload_(std::move(other.payload_)) {
  other.payload_.clear();
}

TensorRecord& TensorRecord::operator=(TensorRecord&& other) noexcept {
  if (this != &other) {
    gauge_sub();
    dtype_ = std::move(other.dtype_);
    shape_ = std::move(other.shape_);
    payload_ = std::move(other.payload_);
    other.payload_.clear();
  }
  return *this;
}

TensorRecord::~TensorRecord() { gauge_sub(); }

void TensorRecord::gauge_add() { MemoryGauge::add(static_cast<int64_t>(payload_.size())); }
void TensorRecord::gauge_sub() { MemoryGauge::sub(static_cast<int64_t>(payload_.size())); }

int64_t TensorRecord::numel() const { return shape_numel(shape_); }

bool TensorRecord::is_float() const {
  return dtype_ == "F16" || dtype_ == "BF16" || dtype_ == "F32" || dtype_ == "F64";
}

Eigen::MatrixXd TensorRecord::to_matrix() const {
  if (shape_.size() != 2) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("expected a rank-2 tensor, got rank {}", shape_.size()));
  }
  const Dtype dt = parse_float_dtype(dtype_);
  const int64_t rows = shape_[0];
  const int64_t cols = shape_[1];
  Eigen::MatrixXd out(rows, cols);
  const std::byte* p = payload_.data();
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t j = 0; j < cols; ++j) {
      out(i, j) = payload_read_f64(p, dt, i * cols + j);
    }
  }
  return out;
}

Eigen::VectorXd TensorRecord::to_vector() const {
  const Dtype dt = parse_float_dtype(dtype_);
  const int64_t n = numel();
  Eigen::VectorXd out(n);
  for (int64_t i = 0; i < n; ++i) out(i) = payload_read_f64(payload_.data(), dt, i);
  return out;
}

TensorRecord TensorRecord::from_matrix(const Eigen::MatrixXd& m, Dtype dtype) {
  const size_t width = dtype_size(dtype);
  std::vector<std::byte> payload(width * static_cast<size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      payload_write_f64(payload.data(), dtype, i * m.cols() + j, m(i, j));
    }
  }
  return TensorRecord(std::string(dtype_name(dtype)), {m.rows(), m.cols()},
                      std::move(payload));
}

TensorRecord TensorRecord::from_vector(const Eigen::VectorXd& v,
                                       const std::vector<int64_t>& shape, Dtype dtype) {
  if (shape_numel(shape) != v.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("shape holds {} elements but vector has {}",
                            shape_numel(shape), v.size()));
  }
  const size_t width = dtype_size(dtype);
  std::vector<std::byte> payload(width * static_cast<size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    payload_write_f64(payload.data(), dtype, i, v(i));
  }
  return TensorRecord(std::string(dtype_name(dtype)), shape, std::move(payload));
}

// ---------------------------------------------------------------------------
// TensorFileReader

TensorFileReader::TensorFileReader(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIoError, fmt::format("cannot open {}", path_.string()));
  }
  std::error_code ec;
  const uint64_t file_size = std::filesystem::file_size(path_, ec);
  if (ec) {
    throw Error(ErrorCode::kIoError, fmt::format("cannot stat {}", path_.string()));
  }
  if (file_size < 8) {
    throw Error(ErrorCode::kMalformedHeader,
                fmt::format("{}: file too small for a header length", path_.string()));
  }
  std::byte len_bytes[8];
  in.read(reinterpret_cast<char*>(len_bytes), 8);
  const uint64_t header_len = read_u64_le(len_bytes);
  if (header_len > kMaxHeaderBytes || 8 + header_len > file_size) {
    throw Error(ErrorCode::kMalformedHeader,
                fmt::format("{}: header length {} exceeds file size {}", path_.string(),
                            header_len, file_size));
  }
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!in) {
    throw Error(ErrorCode::kMalformedHeader,
                fmt::format("{}: truncated header", path_.string()));
  }
  data_start_ = 8 + header_len;
  data_size_ = file_size - data_start_;

  json header = json::parse(header_text, nullptr, false);
  if (header.is_discarded() || !header.is_object()) {
    throw Error(ErrorCode::kMalformedHeader,
                fmt::format("{}: header is not a JSON object", path_.string()));
  }

  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") {
      if (!entry.is_object()) {
        throw Error(ErrorCode::kMalformedHeader, "__metadata__ must be an object");
      }
      for (const auto& [k, v] : entry.items()) {
        if (!v.is_string()) {
          throw Error(ErrorCode::kMalformedHeader,
                      fmt::format("__metadata__.{} must be a string", k));
        }
        metadata_[k] = v.get<std::string>();
      }
      continue;
    }
    if (!entry.is_object() || entry.size() != 3 || !entry.contains("dtype") ||
        !entry.contains("shape") || !entry.contains("data_offsets")) {
      throw Error(ErrorCode::kMalformedHeader,
                  fmt::format("tensor {} must have exactly dtype, shape, data_offsets", name));
    }
    TensorInfo info;
    if (!entry["dtype"].is_string()) {
      throw Error(ErrorCode::kMalformedHeader, fmt::format("tensor {}: dtype must be a string", name));
    }
    info.dtype = entry["dtype"].get<std::string>();
    const auto width = dtype_width(info.dtype);
    if (!width) {
      throw Error(ErrorCode::kUnsupportedDtype,
                  fmt::format("tensor {}: unknown dtype {}", name, info.dtype));
    }
    if (!entry["shape"].is_array()) {
      throw Error(ErrorCode::kMalformedHeader, fmt::format("tensor {}: shape must be an array", name));
    }
    for (const auto& d : entry["shape"]) {
      if (!d.is_number_unsigned()) {
        throw Error(ErrorCode::kMalformedHeader,
                    fmt::format("tensor {}: shape entries must be non-negative integers", name));
      }
      info.shape.push_back(d.get<int64_t>());
    }
    const auto& offsets = entry["data_offsets"];
    if (!offsets.is_array() || offsets.size() != 2 || !offsets[0].is_number_unsigned() ||
        !offsets[1].is_number_unsigned()) {
      throw Error(ErrorCode::kMalformedHeader,
                  fmt::format("tensor {}: data_offsets must be [begin, end]", name));
    }
    info.begin = offsets[0].get<uint64_t>();
    info.end = offsets[1].get<uint64_t>();
    if (info.begin > info.end || info.end > data_size_) {
      throw Error(ErrorCode::kOffsetOutOfRange,
                  fmt::format("tensor {}: offsets [{}, {}) exceed data section of {} bytes",
                              name, info.begin, info.end, data_size_));
    }
    const uint64_t expected = static_cast<uint64_t>(shape_numel(info.shape)) * *width;
    if (info.end - info.begin != expected) {
      throw Error(ErrorCode::kMalformedHeader,
                  fmt::format("tensor {}: payload is {} bytes, shape x dtype needs {}",
                              name, info.end - info.begin, expected));
    }
    tensors_.emplace(name, std::move(info));
  }

  // Reject overlapping payload ranges.
  std::vector<std::pair<uint64_t, uint64_t>> ranges;
  ranges.reserve(tensors_.size());
  for (const auto& [name, info] : tensors_) {
    if (info.begin != info.end) ranges.emplace_back(info.begin, info.end);
  }
  std::sort(ranges.begin(), ranges.end());
  for (size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) {
      throw Error(ErrorCode::kOffsetOutOfRange,
                  fmt::format("{}: overlapping tensor payloads", path_.string()));
    }
  }
}

TensorRecord TensorFileReader::read(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("tensor {} not present in {}", name, path_.string()));
  }
  const TensorInfo& info = it->second;
  std::ifstream in(path_, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIoError, fmt::format("cannot open {}", path_.string()));
  }
  std::vector<std::byte> payload(info.end - info.begin);
  in.seekg(static_cast<std::streamoff>(data_start_ + info.begin));
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size()));
  if (!in && !payload.empty()) {
    throw Error(ErrorCode::kIoError, fmt::format("short read on {}", path_.string()));
  }
  return TensorRecord(info.dtype, info.shape, std::move(payload));
}

// ---------------------------------------------------------------------------
// TensorFileWriter

TensorFileWriter::TensorFileWriter(std::filesystem::path path,
                                   std::vector<TensorWriteSpec> plan,
                                   std::map<std::string, std::string> metadata)
    : path_(std::move(path)), tmp_path_(path_.string() + ".tmp"), plan_(std::move(plan)) {
  std::sort(plan_.begin(), plan_.end(),
            [](const TensorWriteSpec& a, const TensorWriteSpec& b) { return a.name < b.name; });
  json header = json::object();
  if (!metadata.empty()) {
    header["__metadata__"] = metadata;
  }
  uint64_t offset = 0;
  for (const auto& spec : plan_) {
    header[spec.name] = {
        {"dtype", spec.dtype},
        {"shape", spec.shape},
        {"data_offsets", {offset, offset + spec.nbytes}},
    };
    offset += spec.nbytes;
  }
  const std::string text = header.dump();
  std::ofstream out(tmp_path_, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::kIoError, fmt::format("cannot create {}", tmp_path_.string()));
  }
  write_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) {
    throw Error(ErrorCode::kIoError, fmt::format("write failed on {}", tmp_path_.string()));
  }
  stream_ = std::move(out);
}

TensorFileWriter::~TensorFileWriter() {
  if (!finalized_) {
    stream_.close();
    std::error_code ec;
    std::filesystem::remove(tmp_path_, ec);
  }
}

void TensorFileWriter::write(const std::string& name, const std::vector<std::byte>& payload) {
  if (next_ >= plan_.size() || plan_[next_].name != name) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("tensor {} written out of declared order", name));
  }
  if (payload.size() != plan_[next_].nbytes) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("tensor {}: planned {} bytes, got {}", name,
                            plan_[next_].nbytes, payload.size()));
  }
  stream_.write(reinterpret_cast<const char*>(payload.data()),
                static_cast<std::streamsize>(payload.size()));
  if (!stream_) {
    throw Error(ErrorCode::kIoError, fmt::format("write failed on {}", tmp_path_.string()));
  }
  ++next_;
}

void TensorFileWriter::finalize() {
  if (next_ != plan_.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("finalize with {} of {} tensors written", next_, plan_.size()));
  }
  stream_.flush();
  stream_.close();
  if (!stream_) {
    throw Error(ErrorCode::kIoError, fmt::format("flush failed on {}", tmp_path_.string()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp_path_, path_, ec);
  if (ec) {
    throw Error(ErrorCode::kIoError,
                fmt::format("rename {} -> {} failed: {}", tmp_path_.string(),
                            path_.string(), ec.message()));
  }
  finalized_ = true;
}

// ---------------------------------------------------------------------------
// Eager helpers

TensorFile load_tensor_file(const std::filesystem::path& path) {
  TensorFileReader reader(path);
  TensorFile out;
  out.metadata = reader.metadata();
  for (const auto& [name, info] : reader.tensors()) {
    out.tensors.emplace(name, reader.read(name));
  }
  return out;
}

void store_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  std::vector<TensorWriteSpec> plan;
  plan.reserve(file.tensors.size());
  for (const auto& [name, record] : file.tensors) {
    plan.push_back({name, record.dtype(), record.shape(),
                    static_cast<uint64_t>(record.payload().size())});
  }
  TensorFileWriter writer(path, std::move(plan), file.metadata);
  for (const auto& [name, record] : file.tensors) {
    writer.write(name, record.payload());
  }
  writer.finalize();
}

}  // namespace orthomerge
