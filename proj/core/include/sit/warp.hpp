#pragma once

#include <memory>
#include <vector>

#include "sit/autodiff.hpp"
#include "sit/image.hpp"

namespace sit {

/// A fixed sparse linear map from one image to another (bilinear resize,
/// affine warp, flip, box downsample). Plans are immutable and apply both
/// to plain images and to tape nodes, so gradients flow through warps.
struct WarpPlan {
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0, c = 0;
  int fan = 0;
  std::shared_ptr<const std::vector<int>> idx;
  std::shared_ptr<const std::vector<double>> wts;

  Image apply(const Image& x) const;
  ad::Var apply(ad::Tape& tape, ad::Var x) const;
};

WarpPlan make_resize_plan(int in_h, int in_w, int c, int out_h, int out_w);

/// Affine warp: output pixel (y, x) samples the input at
/// A·(x_n, y_n) + b in normalized [-1, 1] coordinates, bilinear with
/// coordinates clamped to the image.
WarpPlan make_affine_plan(int h, int w, int c, const Eigen::Matrix2d& a, const Eigen::Vector2d& b);

WarpPlan make_hflip_plan(int h, int w, int c);

/// Exact copy (fan-1, unit weights).
WarpPlan make_identity_plan(int h, int w, int c);

/// Box average by an integer factor (h, w must divide evenly).
WarpPlan make_box_downsample_plan(int h, int w, int c, int factor);

Image resize_bilinear(const Image& x, int out_h, int out_w);

}  // namespace sit
