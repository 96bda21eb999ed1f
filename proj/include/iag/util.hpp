// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace iag {

// Element type of all tensors. Double by default; -DIAG_REAL32 switches the
// whole substrate to 32-bit for cheaper training runs. All documented
// tolerances assume the 64-bit build.
#ifdef IAG_REAL32
using real_t = float;
#else
using real_t = double;
#endif

// Raised for malformed inputs, bad configuration values, broken invariants.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a pipeline stage cannot complete.
class StageError : public std::runtime_error {
 public:
  explicit StageError(const std::string& msg) : std::runtime_error(msg) {}
};

// FNV-1a, the hash used everywhere stability across runs matters
// (config hashes, fixture keys, per-question RNG streams).
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a_u64(std::uint64_t v, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent RNG stream from a base seed and a label, so that
// stages and per-question draws never share state.
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = fnv1a_u64(seed);
  h = fnv1a(tag, h);
  // splitmix64 finalizer
  h += 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag, std::uint64_t n) {
  return mix_seed(mix_seed(seed, tag), std::to_string(n));
}

inline std::string hex64(std::uint64_t v) {
  static const char* d = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = d[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace iag
