#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace gprn {

using Rng = std::mt19937_64;

/// Independent sub-stream `stream` of the generator family rooted at `seed`.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x67707266u};
  return Rng(seq);
}

inline double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline double uniform01(Rng& rng) {
  // (0, 1]: keeps log() finite.
  return 1.0 - std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline Eigen::VectorXd standard_normal_vector(Rng& rng, Eigen::Index n) {
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = standard_normal(rng);
  return z;
}

}  // namespace gprn
