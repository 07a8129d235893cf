#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fedpit {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// A named random stream. Every random decision in a run draws from a stream
/// derived from the root seed and a (name, round, client) key, so results do
/// not depend on the order in which streams are consumed.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : engine_(splitmix64(seed)) {}

  static Rng stream(std::uint64_t root, std::string_view name, std::uint64_t round = 0,
                    std::uint64_t client = 0) {
    std::uint64_t s = splitmix64(root ^ hash_name(name));
    s = splitmix64(s ^ (round * 0x632be59bd9b4e019ULL));
    s = splitmix64(s ^ (client * 0x8cb92ba72f3d8dd7ULL));
    return Rng(s);
  }

  // Independent stream from a base value and an index; order of use is irrelevant.
  static Rng derive(std::uint64_t base, std::string_view name, std::uint64_t index = 0) {
    return Rng(splitmix64(splitmix64(base ^ hash_name(name)) ^ splitmix64(index + 1)));
  }

  Rng child(std::string_view name, std::uint64_t index = 0) {
    return Rng(splitmix64(engine_() ^ hash_name(name) ^ splitmix64(index)));
  }

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = max() - (max() % n);
    std::uint64_t x = 0;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(engine_);
  }

  double gamma(double shape) {
    std::gamma_distribution<double> d(shape, 1.0);
    return d(engine_);
  }

  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fedpit
