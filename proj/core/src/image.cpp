#include "sit/image.hpp"

namespace sit {

Image clamp(const Image& x, double lo, double hi) {
  Image out = x;
  out.data = out.data.max(lo).min(hi);
  return out;
}

bool bitwise_equal(const Image& a, const Image& b) {
  if (!a.same_shape(b)) return false;
  return (a.data == b.data).all();
}

Eigen::VectorXd channel_means(const Image& x) {
  Eigen::VectorXd m(x.c);
  for (int ch = 0; ch < x.c; ++ch) m[ch] = x.data.segment(std::ptrdiff_t(ch) * x.plane(), x.plane()).mean();
  return m;
}

}  // namespace sit
