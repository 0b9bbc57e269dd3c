// Copyright 2026 The lorashield Authors
// SPDX-License-Identifier: Apache-2.0

// Reading and writing of the safetensors container:
//   [0, 8)        header length N, little-endian u64
//   [8, 8 + N)    UTF-8 JSON header, space padded
//   [8 + N, end)  tensor data, tightly packed in header order

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lorashield/error.hpp"

namespace lorashield {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

enum class Dtype { kF16, kF32, kF64 };

constexpr std::size_t dtype_size(Dtype dtype) {
  switch (dtype) {
    case Dtype::kF16: return 2;
    case Dtype::kF32: return 4;
    case Dtype::kF64: return 8;
  }
  return 0;
}

constexpr std::string_view dtype_name(Dtype dtype) {
  switch (dtype) {
    case Dtype::kF16: return "F16";
    case Dtype::kF32: return "F32";
    case Dtype::kF64: return "F64";
  }
  return "?";
}

inline Dtype parse_dtype(std::string_view name) {
  if (name == "F16") return Dtype::kF16;
  if (name == "F32") return Dtype::kF32;
  if (name == "F64") return Dtype::kF64;
  fail(ErrorCode::kUnsupportedDtype, "dtype '" + std::string(name) + "' is not supported");
}

using Shape = std::vector<std::uint64_t>;

inline std::uint64_t element_count(const Shape& shape) {
  std::uint64_t count = 1;
  for (auto dim : shape) {
    if (dim != 0 && count > UINT64_MAX / dim) fail(ErrorCode::kMalformedHeader, "shape product overflows");
    count *= dim;
  }
  return count;
}

struct Tensor {
  Dtype dtype = Dtype::kF32;
  Shape shape;
  std::vector<std::uint8_t> data;

  std::uint64_t numel() const { return element_count(shape); }
  std::uint64_t expected_bytes() const { return numel() * dtype_size(dtype); }

  bool operator==(const Tensor&) const = default;
};

/// Ordered collection of named tensors. Iteration order is insertion order,
/// which is also the on-disk layout order.
class TensorMap {
 public:
  using Entry = std::pair<std::string, Tensor>;
  using Metadata = std::map<std::string, std::string>;

  void add(std::string name, Tensor tensor) {
    if (name.empty()) fail(ErrorCode::kNameCollision, "tensor names must be non-empty");
    if (name == "__metadata__") fail(ErrorCode::kNameCollision, "'__metadata__' is reserved");
    if (index_.contains(name)) fail(ErrorCode::kNameCollision, "duplicate tensor name '" + name + "'");
    if (tensor.data.size() != tensor.expected_bytes()) {
      fail(ErrorCode::kShapeMismatch, "tensor '" + name + "' holds " + std::to_string(tensor.data.size()) +
                                          " bytes, shape requires " + std::to_string(tensor.expected_bytes()));
    }
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(tensor));
  }

  const Tensor* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].second;
  }

  const Tensor& at(const std::string& name) const {
    const Tensor* tensor = find(name);
    if (tensor == nullptr) fail(ErrorCode::kIndexOutOfRange, "no tensor named '" + name + "'");
    return *tensor;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<Entry>& entries() const { return entries_; }

  const std::optional<Metadata>& metadata() const { return metadata_; }
  void set_metadata(Metadata metadata) { metadata_ = std::move(metadata); }
  void set_metadata(const std::string& key, std::string value) {
    if (!metadata_) metadata_.emplace();
    (*metadata_)[key] = std::move(value);
  }
  std::optional<std::string> metadata_value(const std::string& key) const {
    if (!metadata_) return std::nullopt;
    auto it = metadata_->find(key);
    if (it == metadata_->end()) return std::nullopt;
    return it->second;
  }

  bool operator==(const TensorMap& other) const {
    return entries_ == other.entries_ && metadata_ == other.metadata_;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::optional<Metadata> metadata_;
};

inline TensorMap read_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) fail(ErrorCode::kMalformedHeader, "input shorter than the 8-byte length prefix");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data(), 8);
  if (header_len > bytes.size() - 8) {
    fail(ErrorCode::kMalformedHeader, "declared header length " + std::to_string(header_len) + " exceeds input");
  }

  const auto* header_begin = reinterpret_cast<const char*>(bytes.data() + 8);
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(header_begin, header_begin + header_len);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kMalformedHeader, std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) fail(ErrorCode::kMalformedHeader, "header must be a JSON object");

  const std::span<const std::uint8_t> buffer = bytes.subspan(8 + header_len);

  struct Pending {
    std::string name;
    Tensor tensor;
    std::uint64_t begin;
    std::uint64_t end;
  };
  std::vector<Pending> pending;
  TensorMap result;

  for (const auto& [key, value] : header.items()) {
    if (key == "__metadata__") {
      if (!value.is_object()) fail(ErrorCode::kMalformedHeader, "__metadata__ must be an object");
      TensorMap::Metadata metadata;
      for (const auto& [mk, mv] : value.items()) {
        if (!mv.is_string()) fail(ErrorCode::kMalformedHeader, "__metadata__ values must be strings");
        metadata[mk] = mv.get<std::string>();
      }
      result.set_metadata(std::move(metadata));
      continue;
    }
    if (!value.is_object() || !value.contains("dtype") || !value.contains("shape") ||
        !value.contains("data_offsets")) {
      fail(ErrorCode::kMalformedHeader, "entry '" + key + "' lacks dtype/shape/data_offsets");
    }
    const auto& dtype = value["dtype"];
    const auto& shape = value["shape"];
    const auto& offsets = value["data_offsets"];
    if (!dtype.is_string() || !shape.is_array() || !offsets.is_array() || offsets.size() != 2) {
      fail(ErrorCode::kMalformedHeader, "entry '" + key + "' has ill-typed fields");
    }
    Pending p;
    p.name = key;
    p.tensor.dtype = parse_dtype(dtype.get<std::string>());
    for (const auto& dim : shape) {
      if (!dim.is_number_unsigned()) fail(ErrorCode::kMalformedHeader, "entry '" + key + "' has a bad dimension");
      p.tensor.shape.push_back(dim.get<std::uint64_t>());
    }
    if (!offsets[0].is_number_unsigned() || !offsets[1].is_number_unsigned()) {
      fail(ErrorCode::kMalformedHeader, "entry '" + key + "' has bad data_offsets");
    }
    p.begin = offsets[0].get<std::uint64_t>();
    p.end = offsets[1].get<std::uint64_t>();
    if (p.end < p.begin) fail(ErrorCode::kOverlappingOffsets, "entry '" + key + "' has end < begin");
    if (p.end - p.begin != p.tensor.expected_bytes()) {
      fail(ErrorCode::kMalformedHeader, "entry '" + key + "' byte range disagrees with its dtype and shape");
    }
    pending.push_back(std::move(p));
  }

  // Ranges must tile the data buffer exactly.
  std::vector<std::size_t> order(pending.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::pair(pending[a].begin, pending[a].end) < std::pair(pending[b].begin, pending[b].end);
  });
  std::uint64_t cursor = 0;
  for (auto i : order) {
    if (pending[i].begin != cursor) {
      fail(ErrorCode::kOverlappingOffsets, "entry '" + pending[i].name + "' is not contiguous with its predecessor");
    }
    cursor = pending[i].end;
  }
  if (cursor != buffer.size()) {
    fail(ErrorCode::kOverlappingOffsets, "data buffer holds " + std::to_string(buffer.size()) +
                                             " bytes, header declares " + std::to_string(cursor));
  }

  for (auto& p : pending) {
    p.tensor.data.assign(buffer.begin() + static_cast<std::ptrdiff_t>(p.begin),
                         buffer.begin() + static_cast<std::ptrdiff_t>(p.end));
    result.add(std::move(p.name), std::move(p.tensor));
  }
  return result;
}

inline std::vector<std::uint8_t> write_container(const TensorMap& map) {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  if (map.metadata()) {
    nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
    for (const auto& [k, v] : *map.metadata()) metadata[k] = v;
    header["__metadata__"] = std::move(metadata);
  }
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : map.entries()) {
    nlohmann::ordered_json entry;
    entry["dtype"] = dtype_name(tensor.dtype);
    entry["shape"] = tensor.shape;
    entry["data_offsets"] = {offset, offset + tensor.data.size()};
    header[name] = std::move(entry);
    offset += tensor.data.size();
  }

  std::string text = header.dump();
  text.append((8 - text.size() % 8) % 8, ' ');

  std::vector<std::uint8_t> out;
  out.reserve(8 + text.size() + offset);
  const std::uint64_t header_len = text.size();
  out.resize(8);
  std::memcpy(out.data(), &header_len, 8);
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, tensor] : map.entries()) out.insert(out.end(), tensor.data.begin(), tensor.data.end());
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::kIo, "read error on '" + path.string() + "'");
  return bytes;
}

/// Writes to a sibling temporary file and renames it into place.
inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::kIo, "write error on '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIo, "cannot rename into '" + path.string() + "': " + ec.message());
}

inline void write_file(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline TensorMap load_container(const std::filesystem::path& path) { return read_container(read_file(path)); }

inline void save_container(const std::filesystem::path& path, const TensorMap& map) {
  write_file(path, write_container(map));
}

}  // namespace lorashield
