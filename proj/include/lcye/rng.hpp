#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace lcye {

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::string_view s);
std::uint64_t splitmix64(std::uint64_t x);

/// Seeded generator with named, order-independent substreams: the stream for
/// ("victim.init", 3) is the same whether or not other streams were drawn.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }
  Rng substream(std::string_view name) const;
  Rng substream(std::string_view name, std::uint64_t index) const;

  double uniform(double lo = 0.0, double hi = 1.0);
  double normal(double mean = 0.0, double stddev = 1.0);
  int uniform_int(int lo, int hi);  // inclusive bounds
  bool bernoulli(double p);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace lcye
