#include "sit/warp.hpp"

#include <algorithm>
#include <cmath>

#include "sit/errors.hpp"

namespace sit {

namespace {

struct PlanBuilder {
  std::vector<int> idx;
  std::vector<double> wts;

  void push(int i, double w) {
    idx.push_back(i);
    wts.push_back(w);
  }
};

WarpPlan finish(PlanBuilder&& b, int in_h, int in_w, int out_h, int out_w, int c, int fan) {
  WarpPlan p;
  p.in_h = in_h;
  p.in_w = in_w;
  p.out_h = out_h;
  p.out_w = out_w;
  p.c = c;
  p.fan = fan;
  p.idx = std::make_shared<const std::vector<int>>(std::move(b.idx));
  p.wts = std::make_shared<const std::vector<double>>(std::move(b.wts));
  return p;
}

// Bilinear taps at continuous source position (sy, sx), clamped to the image.
void bilinear_taps(PlanBuilder& b, int in_h, int in_w, int plane_off, double sy, double sx) {
  sy = std::clamp(sy, 0.0, double(in_h - 1));
  sx = std::clamp(sx, 0.0, double(in_w - 1));
  int y0 = int(std::floor(sy)), x0 = int(std::floor(sx));
  int y1 = std::min(y0 + 1, in_h - 1), x1 = std::min(x0 + 1, in_w - 1);
  double fy = sy - y0, fx = sx - x0;
  b.push(plane_off + y0 * in_w + x0, (1 - fy) * (1 - fx));
  b.push(plane_off + y0 * in_w + x1, (1 - fy) * fx);
  b.push(plane_off + y1 * in_w + x0, fy * (1 - fx));
  b.push(plane_off + y1 * in_w + x1, fy * fx);
}

}  // namespace

Image WarpPlan::apply(const Image& x) const {
  if (x.h != in_h || x.w != in_w || x.c != c) throw InvalidArgument("warp: input shape mismatch");
  Image out(out_h, out_w, c);
  const auto& I = *idx;
  const auto& W = *wts;
  for (int p = 0; p < out.size(); ++p) {
    double acc = 0.0;
    for (int f = 0; f < fan; ++f) {
      int j = I[std::size_t(p) * fan + f];
      if (j >= 0) acc += W[std::size_t(p) * fan + f] * x.data[j];
    }
    out.data[p] = acc;
  }
  return out;
}

ad::Var WarpPlan::apply(ad::Tape& tape, ad::Var x) const {
  if (tape.val(x).size() != Eigen::Index(in_h) * in_w * c) throw InvalidArgument("warp: input size mismatch");
  return ad::lincomb_gather(x, idx, wts, fan, out_h * out_w * c);
}

WarpPlan make_resize_plan(int in_h, int in_w, int c, int out_h, int out_w) {
  if (in_h < 1 || in_w < 1 || out_h < 1 || out_w < 1) throw InvalidArgument("resize: bad sizes");
  PlanBuilder b;
  // Align-corners-free mapping, matching the usual half-pixel convention.
  double sy_scale = double(in_h) / out_h, sx_scale = double(in_w) / out_w;
  for (int ch = 0; ch < c; ++ch) {
    int off = ch * in_h * in_w;
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        double sy = (y + 0.5) * sy_scale - 0.5;
        double sx = (x + 0.5) * sx_scale - 0.5;
        bilinear_taps(b, in_h, in_w, off, sy, sx);
      }
  }
  return finish(std::move(b), in_h, in_w, out_h, out_w, c, 4);
}

WarpPlan make_affine_plan(int h, int w, int c, const Eigen::Matrix2d& a, const Eigen::Vector2d& t) {
  PlanBuilder b;
  for (int ch = 0; ch < c; ++ch) {
    int off = ch * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        // normalized coords in [-1, 1]
        double xn = w > 1 ? 2.0 * x / (w - 1) - 1.0 : 0.0;
        double yn = h > 1 ? 2.0 * y / (h - 1) - 1.0 : 0.0;
        Eigen::Vector2d src = a * Eigen::Vector2d(xn, yn) + t;
        double sx = (src.x() + 1.0) * 0.5 * (w - 1);
        double sy = (src.y() + 1.0) * 0.5 * (h - 1);
        bilinear_taps(b, h, w, off, sy, sx);
      }
  }
  return finish(std::move(b), h, w, h, w, c, 4);
}

WarpPlan make_hflip_plan(int h, int w, int c) {
  PlanBuilder b;
  for (int ch = 0; ch < c; ++ch) {
    int off = ch * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) b.push(off + y * w + (w - 1 - x), 1.0);
  }
  return finish(std::move(b), h, w, h, w, c, 1);
}

WarpPlan make_identity_plan(int h, int w, int c) {
  PlanBuilder b;
  for (int i = 0; i < h * w * c; ++i) b.push(i, 1.0);
  return finish(std::move(b), h, w, h, w, c, 1);
}

WarpPlan make_box_downsample_plan(int h, int w, int c, int factor) {
  if (factor < 1 || h % factor != 0 || w % factor != 0)
    throw InvalidArgument("box downsample: factor must divide image size");
  int oh = h / factor, ow = w / factor;
  double wgt = 1.0 / (factor * factor);
  PlanBuilder b;
  for (int ch = 0; ch < c; ++ch) {
    int off = ch * h * w;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            b.push(off + (y * factor + dy) * w + (x * factor + dx), wgt);
  }
  return finish(std::move(b), h, w, oh, ow, c, factor * factor);
}

Image resize_bilinear(const Image& x, int out_h, int out_w) {
  if (x.h == out_h && x.w == out_w) return x;
  return make_resize_plan(x.h, x.w, x.c, out_h, out_w).apply(x);
}

}  // namespace sit
