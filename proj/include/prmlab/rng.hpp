#pragma once

/**
 * Deterministic RNG utilities.
 *
 * All randomness in the project flows through Rng so that results are
 * reproducible bit-for-bit across runs and platforms. std::<distribution>
 * types are implementation-defined, so uniform/normal draws are generated
 * here from raw mt19937_64 output instead.
 *
 * Stream derivation: derive_seed() mixes a base seed with string/integer
 * keys (problem ids, step indices, worker ids) so that per-item streams
 * are independent of scheduling order.
 */

#include <cstdint>
#include <cmath>
#include <random>
#include <string_view>

namespace prmlab {

// splitmix64 finalizer, used both for seeding and for key mixing
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_str(std::string_view s) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t key) {
  return mix64(base ^ mix64(key));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t key,
                                 std::uint64_t extra) {
  return mix64(base ^ mix64(key) ^ mix64(extra * 0x9e3779b97f4a7c15ULL + 1));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view key,
                                 std::uint64_t extra = 0) {
  return mix64(base ^ mix64(hash_str(key)) ^ mix64(extra * 0x9e3779b97f4a7c15ULL + 1));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    // n is tiny everywhere in this project; modulo bias is negligible
    return gen_() % n;
  }

  // standard normal via Box-Muller (deterministic, no cached spare)
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace prmlab
