#pragma once

#include <functional>

#include "sit/autodiff.hpp"
#include "sit/image.hpp"
#include "sit/rng.hpp"

namespace sit::testutil {

inline Image random_image(int h, int w, int c, std::uint64_t seed, double scale = 0.5) {
  RngStream rng(seed);
  Image img(h, w, c);
  img.data = rng.normal_array(img.size()) * scale;
  return img;
}

/// Central finite differences of a scalar function of a flat array.
inline Eigen::ArrayXd finite_difference(const std::function<double(const Eigen::ArrayXd&)>& f,
                                        const Eigen::ArrayXd& x, double h = 1e-5) {
  Eigen::ArrayXd g(x.size());
  Eigen::ArrayXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double step = h * std::max(1.0, std::abs(x[i]));
    probe[i] = x[i] + step;
    double up = f(probe);
    probe[i] = x[i] - step;
    double dn = f(probe);
    probe[i] = x[i];
    g[i] = (up - dn) / (2.0 * step);
  }
  return g;
}

/// Relative error between gradient vectors, robust near zero.
inline double grad_rel_error(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
  double na = std::sqrt(a.square().sum());
  double nb = std::sqrt(b.square().sum());
  double nd = std::sqrt((a - b).square().sum());
  double denom = std::max({na, nb, 1e-12});
  return nd / denom;
}

}  // namespace sit::testutil
