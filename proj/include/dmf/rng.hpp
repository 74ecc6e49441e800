#pragma once

#include <cstdint>
#include <random>

#include "dmf/tensor.hpp"

namespace dmf {

/// Seeded generator shared by every sampling routine. Runs are reproducible
/// bit-for-bit for a given seed and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  Tensor normal_tensor(Shape shape, double mean = 0.0, double stddev = 1.0) {
    Tensor out(std::move(shape));
    std::normal_distribution<double> dist(mean, stddev);
    for (double& x : out.data()) x = dist(engine_);
    return out;
  }

  Tensor uniform_tensor(Shape shape, double lo, double hi) {
    Tensor out(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& x : out.data()) x = dist(engine_);
    return out;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dmf
