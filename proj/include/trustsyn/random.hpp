#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace trustsyn {

std::uint64_t splitmix64(std::uint64_t x);
/// Independent stream seed for episode `index` of a run seeded with `seed`.
std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t index);

/// mt19937_64 with a fixed, library-independent mapping to doubles so runs
/// replay identically everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  // Always consumes exactly one draw.
  int categorical(std::span<const double> weights);

 private:
  std::mt19937_64 gen_;
};

}  // namespace trustsyn
