#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "lcmuse/tensor.hpp"

namespace lcmuse {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a master seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

template <class T>
Tensor<T> normal_tensor(const Shape& shape, Rng& rng, T stddev = T(1)) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor<T> out(shape);
  for (auto& v : out.values()) v = static_cast<T>(stddev * dist(rng));
  return out;
}

template <class T>
Tensor<T> uniform_tensor(const Shape& shape, Rng& rng, T lo, T hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> out(shape);
  for (auto& v : out.values()) v = static_cast<T>(dist(rng));
  return out;
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

/// Random unit-norm direction.
template <class T>
Tensor<T> random_direction(const Shape& shape, Rng& rng) {
  for (;;) {
    auto d = normal_tensor<T>(shape, rng);
    const T n = norm(d);
    if (n > T(0)) return d * (T(1) / n);
  }
}

/// Uniform sample from the closed Euclidean ball of the given radius.
template <class T>
Tensor<T> uniform_in_ball(const Tensor<T>& center, T radius, Rng& rng) {
  auto d = random_direction<T>(center.shape(), rng);
  const double r = radius * std::pow(uniform01(rng), 1.0 / static_cast<double>(center.size()));
  Tensor<T> out = center;
  axpy(static_cast<T>(r), d, out);
  return out;
}

}  // namespace lcmuse
