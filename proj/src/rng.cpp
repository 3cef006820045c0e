#include "sclair/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sclair {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t fold(std::uint64_t key, std::uint64_t x) {
  return mix64(key ^ mix64(x + kGolden));
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
  key_ = fold(mix64(seed + kGolden), stream);
}

std::uint64_t Rng::next_u64() {
  counter_ += 1;
  return mix64(key_ + counter_ * kGolden);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 1.0 - uniform();  // (0, 1]
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * std::numbers::pi_v<double> * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

Rng Rng::derive(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
  Rng child;
  child.key_ = fold(fold(fold(key_, a + 1), b + 2), c + 3);
  return child;
}

}  // namespace sclair
