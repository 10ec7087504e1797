#include "sit/rng.hpp"

#include <cmath>

namespace sit {

namespace {

// splitmix64 step; also used as the mixing function for fork().
std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed) : seed0_(seed), state_(mix(seed ^ 0xd1b54a32d192ed03ULL)) {}

std::uint64_t RngStream::next_u64() {
  state_ += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double RngStream::uniform() {
  return double(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  // Box-Muller; u1 shifted into (0, 1] so log() stays finite.
  double u1 = (double(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  cached_ = r * std::sin(a);
  has_cached_ = true;
  return r * std::cos(a);
}

Eigen::ArrayXd RngStream::normal_array(int n) {
  Eigen::ArrayXd out(n);
  for (int i = 0; i < n; ++i) out[i] = normal();
  return out;
}

Eigen::ArrayXd RngStream::uniform_array(int n) {
  Eigen::ArrayXd out(n);
  for (int i = 0; i < n; ++i) out[i] = uniform();
  return out;
}

RngStream RngStream::fork(std::uint64_t tag) const {
  return RngStream(mix(seed0_ ^ mix(tag ^ 0xabcdef0123456789ULL)));
}

}  // namespace sit
