#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace locate {

// Error taxonomy. The CLI maps these onto exit codes:
// ConfigError/CapabilityError -> 2, DataError -> 3, anything else -> 4.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& msg) : Error("input error: " + msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error("data error: " + msg) {}
};

class CapabilityError : public Error {
 public:
  explicit CapabilityError(const std::string& msg) : Error("capability error: " + msg) {}
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw InputError(msg);
}

// Deterministic seed derivation. Sub-seeds are mixed from a master seed plus
// a role tag and indices so that independent consumers (shuffling, augment,
// k-means, init) never share a stream.
inline std::uint64_t mix_seed(std::uint64_t h, std::uint64_t v) {
  // splitmix64 finalizer
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  std::uint64_t z = h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t h, const std::string& tag) {
  for (unsigned char c : tag) h = mix_seed(h, c);
  return h;
}

template <typename... Rest>
std::uint64_t mix_seed(std::uint64_t h, std::uint64_t v, Rest... rest) {
  return mix_seed(mix_seed(h, v), rest...);
}

template <typename... Rest>
std::uint64_t mix_seed(std::uint64_t h, const std::string& tag, Rest... rest) {
  return mix_seed(mix_seed(h, tag), rest...);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

// FNV-1a over raw bytes; used to key per-image noise in the synthetic backbone.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace locate
