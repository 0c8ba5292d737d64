#include "lcye/rng.hpp"

#include <cmath>
#include <numbers>

namespace lcye {

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a(std::string_view s) { return fnv1a(s.data(), s.size()); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::substream(std::string_view name) const { return Rng(splitmix64(seed_ ^ fnv1a(name))); }

Rng Rng::substream(std::string_view name, std::uint64_t index) const {
  return Rng(splitmix64(splitmix64(seed_ ^ fnv1a(name)) + index));
}

// Draws are implemented directly on the raw 64-bit engine output so streams are
// reproducible independent of the standard library's distribution algorithms.
double Rng::uniform(double lo, double hi) {
  const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

double Rng::normal(double mean, double stddev) {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int Rng::uniform_int(int lo, int hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(static_cast<std::int64_t>(hi) - lo) + 1;
  return lo + static_cast<int>(engine_() % span);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

}  // namespace lcye
