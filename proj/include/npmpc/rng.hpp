#pragma once

#include <cstdint>
#include <cstring>

#include <Eigen/Dense>

#include "npmpc/geometry.hpp"

namespace npmpc {

/// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based uniform in [0,1): depends only on (seed, i, axis), so the
/// i-th draw is the same no matter how work is split across threads.
inline double counter_uniform(std::uint64_t seed, std::uint64_t i, std::uint64_t axis) {
  std::uint64_t h = mix64(seed ^ mix64(i * 0x632be59bd9b4e019ULL + mix64(axis + 0x1234567ULL)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// The i-th sample drawn uniformly from box B.
inline Eigen::VectorXd counter_sample(const Box& B, std::uint64_t seed, std::uint64_t i) {
  Eigen::VectorXd x(B.dim());
  for (int a = 0; a < B.dim(); ++a)
    x[a] = B.lo()[a] + (B.hi()[a] - B.lo()[a]) * counter_uniform(seed, i, static_cast<std::uint64_t>(a));
  return x;
}

/// Hashes a state to a seed (bitwise; used to derive per-x0 restart seeds).
inline std::uint64_t hash_state(const Eigen::VectorXd& x, std::uint64_t salt = 0) {
  std::uint64_t h = mix64(salt);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    std::uint64_t bits;
    double v = x[i] == 0.0 ? 0.0 : x[i];
    std::memcpy(&bits, &v, sizeof bits);
    h = mix64(h ^ bits);
  }
  return h;
}

}  // namespace npmpc
