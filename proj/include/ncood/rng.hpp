#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace ncood {

// xoshiro256** seeded through splitmix64. Every draw is defined in terms of
// 64-bit integer arithmetic, so a seed produces the same sequence on every
// platform. Normal deviates use the Box-Muller transform with <cmath>
// log/sqrt/cos, which are correctly rounded on the glibc targets we build for.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  static Rng from_state(const State& state);
  const State& state() const { return state_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer on [0, n) without modulo bias.
  std::uint64_t below(std::uint64_t n);
  double normal();

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  State state_{};
};

// Derives an independent stream seed from a base seed and a tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace ncood
