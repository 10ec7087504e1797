#pragma once

#include "sit/image.hpp"

namespace sit {

/// Orthonormal opponent color basis (luminance, yellow-blue, red-green);
/// the decorrelated space in which channel moments are matched.
Eigen::Matrix3d opponent_basis();

Image rgb_to_opponent(const Image& x);
Image opponent_to_rgb(const Image& x);

/// Per-channel mean/variance transfer from `ref` onto `x`. Three-channel
/// images are matched in the opponent space, other channel counts
/// directly. A zero-variance reference channel receives a mean-only
/// transfer. Output is clamped to [-1, 1] unless clamp_output is false.
Image color_match(const Image& x, const Image& ref, bool clamp_output = true);

}  // namespace sit
