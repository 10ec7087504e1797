#pragma once

#include <Eigen/Core>

namespace sit {

/// H×W×C image stored channel-planar: entry (y, x, ch) lives at
/// ch*h*w + y*w + x. Values are nominally in [-1, 1]; excursions outside
/// that range are legal mid-sampling and handled by the range loss.
struct Image {
  int h = 0, w = 0, c = 0;
  Eigen::ArrayXd data;

  Image() = default;
  Image(int h_, int w_, int c_) : h(h_), w(w_), c(c_), data(Eigen::ArrayXd::Zero(std::ptrdiff_t(h_) * w_ * c_)) {}

  static Image zeros(int h, int w, int c) { return Image(h, w, c); }
  static Image constant(int h, int w, int c, double v) {
    Image out(h, w, c);
    out.data.setConstant(v);
    return out;
  }

  int size() const { return h * w * c; }
  int plane() const { return h * w; }

  double& at(int y, int x, int ch) { return data[std::ptrdiff_t(ch) * h * w + std::ptrdiff_t(y) * w + x]; }
  double at(int y, int x, int ch) const { return data[std::ptrdiff_t(ch) * h * w + std::ptrdiff_t(y) * w + x]; }

  bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }
  bool finite() const { return data.isFinite().all(); }
};

Image clamp(const Image& x, double lo, double hi);

/// Exact bit equality, shape included.
bool bitwise_equal(const Image& a, const Image& b);

/// Per-channel mean.
Eigen::VectorXd channel_means(const Image& x);

}  // namespace sit
