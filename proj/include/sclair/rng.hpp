#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace sclair {

// Deterministic splittable RNG. Output is a pure function of the key
// (seed, stream) and a 64-bit counter, so sequences are reproducible across
// runs and platforms and independent of thread scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();

  // Uniform in [0, 1), 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller; the paired value is cached.
  double normal();

  bool bernoulli(double p);

  // Uniform integer in [0, n), n > 0.
  std::uint64_t below(std::uint64_t n);

  // Child generator on an independent stream; the parent is unchanged.
  Rng derive(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const;

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  Rng() = default;

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sclair
