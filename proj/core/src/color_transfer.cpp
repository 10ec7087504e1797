#include "sit/color_transfer.hpp"

#include <cmath>

#include "sit/errors.hpp"

namespace sit {

Eigen::Matrix3d opponent_basis() {
  Eigen::Matrix3d m;
  m << 1 / std::sqrt(3.0), 1 / std::sqrt(3.0), 1 / std::sqrt(3.0),
       1 / std::sqrt(6.0), 1 / std::sqrt(6.0), -2 / std::sqrt(6.0),
       1 / std::sqrt(2.0), -1 / std::sqrt(2.0), 0.0;
  return m;
}

namespace {

Image apply_basis(const Image& x, const Eigen::Matrix3d& m) {
  if (x.c != 3) throw InvalidArgument("opponent transform needs 3 channels");
  Image out(x.h, x.w, 3);
  const int hw = x.plane();
  for (int q = 0; q < hw; ++q) {
    Eigen::Vector3d v(x.data[q], x.data[hw + q], x.data[2 * hw + q]);
    Eigen::Vector3d o = m * v;
    out.data[q] = o[0];
    out.data[hw + q] = o[1];
    out.data[2 * hw + q] = o[2];
  }
  return out;
}

constexpr double kVarFloor = 1e-12;

// Moment transfer per plane; zero-variance reference -> mean shift only.
void transfer_channel(Eigen::Ref<Eigen::ArrayXd> plane, const Eigen::Ref<const Eigen::ArrayXd>& ref) {
  double mu_x = plane.mean(), mu_r = ref.mean();
  double var_x = (plane - mu_x).square().mean();
  double var_r = (ref - mu_r).square().mean();
  if (var_r < kVarFloor || var_x < kVarFloor) {
    plane += mu_r - mu_x;
    return;
  }
  plane = (plane - mu_x) * std::sqrt(var_r / var_x) + mu_r;
}

}  // namespace

Image rgb_to_opponent(const Image& x) { return apply_basis(x, opponent_basis()); }

Image opponent_to_rgb(const Image& x) { return apply_basis(x, opponent_basis().transpose()); }

Image color_match(const Image& x, const Image& ref, bool clamp_output) {
  if (x.c != ref.c) throw InvalidArgument("color_match: channel count mismatch");
  if (!x.finite() || !ref.finite()) throw InvalidArgument("color_match: non-finite input");
  const bool opponent = x.c == 3;
  Image xs = opponent ? rgb_to_opponent(x) : x;
  Image rs = opponent ? rgb_to_opponent(ref) : ref;
  for (int ch = 0; ch < x.c; ++ch) {
    transfer_channel(xs.data.segment(std::ptrdiff_t(ch) * xs.plane(), xs.plane()),
                     rs.data.segment(std::ptrdiff_t(ch) * rs.plane(), rs.plane()));
  }
  Image out = opponent ? opponent_to_rgb(xs) : xs;
  return clamp_output ? clamp(out, -1.0, 1.0) : out;
}

}  // namespace sit
