#include "mism/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace mism {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                  static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_i64(std::ostream& os, int64_t v) {
  uint64_t u = static_cast<uint64_t>(v);
  uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t get_u32(std::istream& is) {
  uint8_t b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  MISM_CHECK(is.good(), "checkpoint: truncated file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

int64_t get_i64(std::istream& is) {
  uint8_t b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  MISM_CHECK(is.good(), "checkpoint: truncated file");
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
  return static_cast<int64_t>(u);
}

std::string get_str(std::istream& is) {
  uint32_t n = get_u32(is);
  MISM_CHECK(n < (1u << 24), "checkpoint: implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  MISM_CHECK(is.good() || n == 0, "checkpoint: truncated string");
  return s;
}

}  // namespace

void write_checkpoint_file(const std::string& path, const CheckpointData& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  MISM_CHECK(os.good(), "checkpoint: cannot open for write: " + path);
  os.write(kCheckpointMagic, static_cast<std::streamsize>(std::strlen(kCheckpointMagic)));
  put_str(os, c.dtype);
  put_str(os, c.stage);
  put_u32(os, static_cast<uint32_t>(c.config.size()));
  for (const auto& [k, v] : c.config) {
    put_str(os, k);
    put_str(os, v);
  }
  put_u32(os, static_cast<uint32_t>(c.arrays.size()));
  for (const auto& a : c.arrays) {
    put_str(os, a.name);
    put_u32(os, static_cast<uint32_t>(a.dims.size()));
    for (int64_t d : a.dims) put_i64(os, d);
    put_i64(os, static_cast<int64_t>(a.raw.size()));
    os.write(reinterpret_cast<const char*>(a.raw.data()),
             static_cast<std::streamsize>(a.raw.size()));
  }
  MISM_CHECK(os.good(), "checkpoint: write failed: " + path);
}

CheckpointData read_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  MISM_CHECK(is.good(), "checkpoint: cannot open: " + path);
  std::string magic(std::strlen(kCheckpointMagic), '\0');
  is.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  MISM_CHECK(is.good() && magic == kCheckpointMagic,
             "checkpoint: bad magic or version in " + path + " (got '" + magic + "')");
  CheckpointData c;
  c.dtype = get_str(is);
  MISM_CHECK(c.dtype == "f32" || c.dtype == "f64", "checkpoint: unknown dtype " + c.dtype);
  c.stage = get_str(is);
  const uint32_t ncfg = get_u32(is);
  for (uint32_t i = 0; i < ncfg; ++i) {
    std::string k = get_str(is);
    std::string v = get_str(is);
    c.config.emplace_back(std::move(k), std::move(v));
  }
  const uint32_t narr = get_u32(is);
  for (uint32_t i = 0; i < narr; ++i) {
    CheckpointArray a;
    a.name = get_str(is);
    const uint32_t rank = get_u32(is);
    MISM_CHECK(rank >= 1 && rank <= Shape::kMaxRank, "checkpoint: bad array rank");
    for (uint32_t r = 0; r < rank; ++r) a.dims.push_back(get_i64(is));
    const int64_t bytes = get_i64(is);
    MISM_CHECK(bytes >= 0 && bytes < (int64_t(1) << 33), "checkpoint: implausible array size");
    a.raw.resize(static_cast<size_t>(bytes));
    is.read(reinterpret_cast<char*>(a.raw.data()), bytes);
    MISM_CHECK(is.good(), "checkpoint: truncated array data");
    c.arrays.push_back(std::move(a));
  }
  return c;
}

}  // namespace mism
