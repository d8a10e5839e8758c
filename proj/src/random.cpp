#include "trustsyn/random.hpp"

#include <stdexcept>

namespace trustsyn {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ull));
}

int Rng::categorical(std::span<const double> weights) {
  const double u = uniform();
  double total = 0.0;
  for (double w : weights) total += w;
  double acc = 0.0;
  int last = -1;
  for (int i = 0; i < static_cast<int>(weights.size()); ++i) {
    if (weights[i] <= 0.0) continue;
    last = i;
    acc += weights[i];
    if (u * total < acc) return i;
  }
  if (last < 0) throw std::invalid_argument("categorical draw from an all-zero distribution");
  return last;
}

}  // namespace trustsyn
