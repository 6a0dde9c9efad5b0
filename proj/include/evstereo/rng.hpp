#pragma once
#include <cstdint>
#include <string>

namespace evstereo {

// 64-bit FNV-1a. Used for content hashes in manifests and for deriving RNG
// stream ids from parameter names.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// Counter-based deterministic generator (splitmix64). A value depends only on
// (seed, stream, call index), never on global state or thread identity.
class DetRng {
 public:
  explicit DetRng(uint64_t seed, uint64_t stream = 0) {
    state_ = mix(seed + 0x9e3779b97f4a7c15ull * (stream + 1));
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int64_t uniform_int(int64_t n) { return int64_t(next_u64() % uint64_t(n)); }

 private:
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  uint64_t state_ = 0;
};

}  // namespace evstereo
