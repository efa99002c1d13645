#pragma once

#include "mism/tensor.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

namespace mism {

inline constexpr const char* kCheckpointMagic = "MISM-CKPT-1";

/// One serialized array: raw little-endian scalars plus shape.
struct CheckpointArray {
  std::string name;
  std::vector<int64_t> dims;
  std::vector<uint8_t> raw;
};

/// On-disk model container: named arrays, a config echo, and a stage tag.
/// Arrays keep insertion order so save→load→save is byte-identical.
struct CheckpointData {
  std::string dtype;  // "f32" | "f64"
  std::string stage;  // "teacher" | "student"
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<CheckpointArray> arrays;

  const CheckpointArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
  const std::string* config_value(const std::string& key) const {
    for (const auto& [k, v] : config)
      if (k == key) return &v;
    return nullptr;
  }
};

void write_checkpoint_file(const std::string& path, const CheckpointData& c);
CheckpointData read_checkpoint_file(const std::string& path);

template <typename S>
const char* dtype_name();
template <>
inline const char* dtype_name<float>() { return "f32"; }
template <>
inline const char* dtype_name<double>() { return "f64"; }

template <typename S>
void ckpt_put(CheckpointData& c, const std::string& name, const Tensor<S>& t) {
  MISM_CHECK(c.dtype == dtype_name<S>(), "checkpoint: dtype mismatch on put");
  CheckpointArray a;
  a.name = name;
  for (int i = 0; i < t.rank(); ++i) a.dims.push_back(t.shape()[i]);
  a.raw.resize(static_cast<size_t>(t.numel()) * sizeof(S));
  std::memcpy(a.raw.data(), t.values().data(), a.raw.size());
  c.arrays.push_back(std::move(a));
}

template <typename S>
Tensor<S> ckpt_get(const CheckpointData& c, const std::string& name) {
  MISM_CHECK(c.dtype == dtype_name<S>(), "checkpoint: dtype mismatch on get (" + c.dtype + ")");
  const CheckpointArray* a = c.find(name);
  MISM_CHECK(a != nullptr, "checkpoint: missing array '" + name + "'");
  std::array<Index, Shape::kMaxRank> d{};
  MISM_CHECK(a->dims.size() >= 1 && a->dims.size() <= Shape::kMaxRank, "checkpoint: bad rank");
  for (size_t i = 0; i < a->dims.size(); ++i) d[i] = a->dims[i];
  Shape s;
  switch (a->dims.size()) {
    case 1: s = Shape{d[0]}; break;
    case 2: s = Shape{d[0], d[1]}; break;
    case 3: s = Shape{d[0], d[1], d[2]}; break;
    case 4: s = Shape{d[0], d[1], d[2], d[3]}; break;
    default: s = Shape{d[0], d[1], d[2], d[3], d[4]}; break;
  }
  MISM_CHECK(a->raw.size() == static_cast<size_t>(s.numel()) * sizeof(S),
             "checkpoint: array size mismatch for '" + name + "'");
  Vec<S> v(s.numel());
  std::memcpy(v.data(), a->raw.data(), a->raw.size());
  return Tensor<S>::from(s, std::move(v));
}

}  // namespace mism
