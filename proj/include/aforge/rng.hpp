#pragma once
// Deterministic counter-based RNG. Every consumer derives its own stream from
// (seed, stream id), so draws never depend on call order elsewhere and
// parallel generation stays bit-identical to sequential.

#include <cmath>
#include <cstdint>
#include <string_view>

namespace aforge {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// splitmix64 finalizer
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Rng {
  std::uint64_t state;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : state(mix64(seed + kGolden) ^ mix64(stream + 0x6a09e667f3bcc909ULL)) {}

  std::uint64_t next_u64() {
    state += kGolden;
    return mix64(state);
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal, Box-Muller (one draw per call, no cached spare)
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // [0, n)
  int uniform_int(int n) { return int(next_u64() % std::uint64_t(n)); }
};

// Stream id for a purpose tag plus an index (auction id, ad index, ...).
inline std::uint64_t stream_id(std::string_view tag, std::uint64_t index = 0) {
  return fnv1a(tag) ^ (index * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
}

}  // namespace aforge
