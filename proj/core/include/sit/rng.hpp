#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace sit {

/// Seeded random stream with its own generator and Box-Muller normals, so
/// trajectories are bit-reproducible regardless of the standard library.
/// Substreams derived via fork(tag) are independent of how much of the
/// parent stream has been consumed.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double normal();   // standard normal
  Eigen::ArrayXd normal_array(int n);
  Eigen::ArrayXd uniform_array(int n);

  /// Independent substream keyed by (construction seed, tag).
  RngStream fork(std::uint64_t tag) const;

 private:
  std::uint64_t seed0_;
  std::uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace sit
