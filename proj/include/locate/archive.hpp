#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "locate/common.hpp"
#include "locate/tensor.hpp"

namespace locate {

// Versioned container of named arrays / integers / byte blobs. Used for
// checkpoints, stored heatmaps, and selector debug dumps. Little-endian,
// fixed-width fields, bit-exact round trip for doubles.
//
// Layout:
//   magic   "LCTARCH1"                      (8 bytes)
//   u32     entry_count
//   entry*  u32 name_len, name,
//           u8  kind (0=f64 tensor, 1=i64 scalar, 2=bytes),
//           u32 ndim, u64 dims[ndim],
//           u64 payload_len, payload
class Archive {
 public:
  static constexpr char kMagic[9] = "LCTARCH1";

  void put_tensor(const std::string& name, const Tensor& t) {
    Entry e;
    e.kind = 0;
    e.dims.assign(t.shape().begin(), t.shape().end());
    e.payload.resize(t.size() * sizeof(double));
    std::memcpy(e.payload.data(), t.data(), e.payload.size());
    entries_[name] = std::move(e);
  }

  void put_i64(const std::string& name, std::int64_t v) {
    Entry e;
    e.kind = 1;
    e.payload.resize(sizeof(std::int64_t));
    std::memcpy(e.payload.data(), &v, sizeof(v));
    entries_[name] = std::move(e);
  }

  void put_bytes(const std::string& name, const std::string& bytes) {
    Entry e;
    e.kind = 2;
    e.payload.assign(bytes.begin(), bytes.end());
    entries_[name] = std::move(e);
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor get_tensor(const std::string& name) const {
    const Entry& e = find(name, 0);
    std::vector<std::size_t> shape(e.dims.begin(), e.dims.end());
    Tensor t(shape);
    if (t.size() * sizeof(double) != e.payload.size())
      throw DataError("archive entry '" + name + "' has inconsistent payload size");
    std::memcpy(t.data(), e.payload.data(), e.payload.size());
    return t;
  }

  std::int64_t get_i64(const std::string& name) const {
    const Entry& e = find(name, 1);
    std::int64_t v = 0;
    std::memcpy(&v, e.payload.data(), sizeof(v));
    return v;
  }

  std::string get_bytes(const std::string& name) const {
    const Entry& e = find(name, 2);
    return std::string(e.payload.begin(), e.payload.end());
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    f.write(kMagic, 8);
    write_u32(f, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, e] : entries_) {
      write_u32(f, static_cast<std::uint32_t>(name.size()));
      f.write(name.data(), static_cast<std::streamsize>(name.size()));
      f.put(static_cast<char>(e.kind));
      write_u32(f, static_cast<std::uint32_t>(e.dims.size()));
      for (std::uint64_t d : e.dims) write_u64(f, d);
      write_u64(f, e.payload.size());
      f.write(reinterpret_cast<const char*>(e.payload.data()),
              static_cast<std::streamsize>(e.payload.size()));
    }
    if (!f) throw DataError("short write to '" + path + "'");
  }

  static Archive load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open '" + path + "'");
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0) {
      std::string found(magic, f ? 8 : static_cast<std::size_t>(f.gcount()));
      throw DataError("'" + path + "': bad archive version tag (found '" + found +
                      "', expected '" + std::string(kMagic, 8) + "')");
    }
    Archive a;
    const std::uint32_t n = read_u32(f, path);
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::uint32_t name_len = read_u32(f, path);
      std::string name(name_len, '\0');
      f.read(name.data(), name_len);
      Entry e;
      int kind = f.get();
      if (kind < 0) throw DataError("'" + path + "': truncated archive");
      e.kind = static_cast<std::uint8_t>(kind);
      const std::uint32_t ndim = read_u32(f, path);
      e.dims.resize(ndim);
      for (auto& d : e.dims) d = read_u64(f, path);
      const std::uint64_t len = read_u64(f, path);
      e.payload.resize(len);
      f.read(reinterpret_cast<char*>(e.payload.data()), static_cast<std::streamsize>(len));
      if (!f) throw DataError("'" + path + "': truncated archive");
      a.entries_[name] = std::move(e);
    }
    return a;
  }

 private:
  struct Entry {
    std::uint8_t kind = 0;
    std::vector<std::uint64_t> dims;
    std::vector<std::uint8_t> payload;
  };

  const Entry& find(const std::string& name, std::uint8_t kind) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw DataError("archive entry '" + name + "' missing");
    if (it->second.kind != kind)
      throw DataError("archive entry '" + name + "' has unexpected kind");
    return it->second;
  }

  static void write_u32(std::ofstream& f, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    f.write(b, 4);
  }
  static void write_u64(std::ofstream& f, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    f.write(b, 8);
  }
  static std::uint32_t read_u32(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw DataError("'" + path + "': truncated archive");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  static std::uint64_t read_u64(std::ifstream& f, const std::string& path) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    if (!f) throw DataError("'" + path + "': truncated archive");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace locate
