#include "sit/extractors.hpp"

#include <cmath>
#include <sstream>

#include "sit/errors.hpp"

namespace sit {

void StructureSemanticExtractor::check_input_size(int h, int w) const {
  auto [eh, ew] = input_size();
  if ((eh != 0 && eh != h) || (ew != 0 && ew != w)) {
    std::ostringstream os;
    os << "wrong input size " << h << "x" << w << ", extractor expects " << eh << "x" << ew;
    throw InvalidArgument(os.str());
  }
}

FeatureBundle StructureSemanticExtractor::extract(const Image& x) const {
  ad::Tape tape;
  BundleVar b = extract(tape, tape.constant(x.data), x.h, x.w, x.c);
  FeatureBundle out;
  out.keys.resize(b.n, b.dk);
  const auto& kv = tape.val(b.keys);
  for (int i = 0; i < b.n; ++i)
    for (int j = 0; j < b.dk; ++j) out.keys(i, j) = kv[i * b.dk + j];
  out.cls = tape.val(b.cls).matrix();
  return out;
}

// ---------- ToyPatchExtractor ----------

ToyPatchExtractor::ToyPatchExtractor(int patch, int bins, double bandwidth, std::pair<int, int> input)
    : patch_(patch), bins_(bins), bandwidth_(bandwidth), input_(input) {
  if (patch < 1) throw InvalidArgument("patch must be >= 1");
  if (bins < 1) throw InvalidArgument("bins must be >= 1");
  if (!(bandwidth > 0)) throw InvalidArgument("bandwidth must be positive");
}

int ToyPatchExtractor::n_tokens(int h, int w) const {
  if (h % patch_ != 0 || w % patch_ != 0)
    throw InvalidArgument("image side not divisible by patch size");
  return (h / patch_) * (w / patch_);
}

namespace {

double hist_center(int bins, int b) { return -1.0 + 2.0 * (b + 0.5) / bins; }

}  // namespace

BundleVar ToyPatchExtractor::extract(ad::Tape& tape, ad::Var x, int h, int w, int c) const {
  check_input_size(h, w);
  if (tape.val(x).size() != Eigen::Index(h) * w * c) throw InvalidArgument("extract: input size mismatch");
  const int p = patch_;
  const int n = n_tokens(h, w);
  const int dk = key_dim(c);
  const int hw = h * w;
  const int px = w / p;

  // Keys are a sparse linear map of the pixels plus a constant bias slot.
  auto idx = std::make_shared<std::vector<int>>();
  auto wts = std::make_shared<std::vector<double>>();
  auto offs = std::make_shared<std::vector<int>>();
  offs->reserve(std::size_t(n) * dk + 1);
  offs->push_back(0);
  Eigen::ArrayXd bias = Eigen::ArrayXd::Zero(std::ptrdiff_t(n) * dk);

  const double inv_patch = 1.0 / (p * p);
  const double inv_img = 1.0 / hw;
  const double inv_diff = p > 1 ? 1.0 / (p * (p - 1)) : 0.0;

  for (int i = 0; i < n; ++i) {
    const int py = (i / px) * p, qx = (i % px) * p;
    for (int ch = 0; ch < c; ++ch) {
      const int off = ch * hw;
      // centered patch mean
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx) {
          idx->push_back(off + (py + dy) * w + (qx + dx));
          wts->push_back(inv_patch);
        }
      for (int q = 0; q < hw; ++q) {
        idx->push_back(off + q);
        wts->push_back(-inv_img);
      }
      offs->push_back(int(idx->size()));
      // mean horizontal forward difference within the patch
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx + 1 < p; ++dx) {
          idx->push_back(off + (py + dy) * w + (qx + dx + 1));
          wts->push_back(inv_diff);
          idx->push_back(off + (py + dy) * w + (qx + dx));
          wts->push_back(-inv_diff);
        }
      offs->push_back(int(idx->size()));
      // mean vertical forward difference within the patch
      for (int dy = 0; dy + 1 < p; ++dy)
        for (int dx = 0; dx < p; ++dx) {
          idx->push_back(off + (py + dy + 1) * w + (qx + dx));
          wts->push_back(inv_diff);
          idx->push_back(off + (py + dy) * w + (qx + dx));
          wts->push_back(-inv_diff);
        }
      offs->push_back(int(idx->size()));
    }
    offs->push_back(int(idx->size()));  // bias slot: no taps
    bias[std::ptrdiff_t(i) * dk + (dk - 1)] = 1.0;
  }

  BundleVar out;
  out.n = n;
  out.dk = dk;
  out.keys = ad::add(ad::lincomb_gather_csr(x, idx, wts, offs), tape.constant(bias));

  // cls: Gaussian soft histogram per channel.
  std::vector<ad::Var> cls_parts;
  cls_parts.reserve(std::size_t(c) * bins_);
  const double inv_two_bw2 = 1.0 / (2.0 * bandwidth_ * bandwidth_);
  for (int ch = 0; ch < c; ++ch) {
    ad::Var plane = ad::slice(x, ch * hw, hw);
    for (int b = 0; b < bins_; ++b) {
      ad::Var d = ad::adds(plane, -hist_center(bins_, b));
      cls_parts.push_back(ad::mean(ad::exp(ad::muls(ad::square(d), -inv_two_bw2))));
    }
  }
  out.cls = ad::concat(cls_parts);
  out.dc = bins_ * c;
  return out;
}

Eigen::VectorXd ToyPatchExtractor::zero_image_cls(int c) const {
  Eigen::VectorXd out(bins_ * c);
  const double inv_two_bw2 = 1.0 / (2.0 * bandwidth_ * bandwidth_);
  for (int ch = 0; ch < c; ++ch)
    for (int b = 0; b < bins_; ++b) {
      double ctr = hist_center(bins_, b);
      out[ch * bins_ + b] = std::exp(-ctr * ctr * inv_two_bw2);
    }
  return out;
}

// ---------- embedders ----------

EmbeddingVector TextImageEmbedder::embed_image(const Image& x) const {
  ad::Tape tape;
  ad::Var e = embed_image(tape, tape.constant(x.data), x.h, x.w, x.c);
  EmbeddingVector out;
  out.v = tape.val(e).matrix();
  out.normalized = std::abs(out.v.norm() - 1.0) < 1e-9;
  return out;
}

ToyColorEmbedder::ToyColorEmbedder(int channels) : channels_(channels) {
  if (channels < 1) throw InvalidArgument("embedder needs at least one channel");
}

int ToyColorEmbedder::embed_dim() const { return (channels_ + 1) + (2 * channels_ + 1); }

ad::Var ToyColorEmbedder::embed_image(ad::Tape& tape, ad::Var x, int h, int w, int c) const {
  if (c != channels_) throw InvalidArgument("embed_image: channel count mismatch");
  const int hw = h * w;
  if (tape.val(x).size() != Eigen::Index(hw) * c) throw InvalidArgument("embed_image: size mismatch");

  // part 1: channel means with a constant bias slot (never zero-norm)
  std::vector<ad::Var> mean_elems;
  for (int ch = 0; ch < c; ++ch) mean_elems.push_back(ad::mean(ad::slice(x, ch * hw, hw)));
  mean_elems.push_back(tape.constant(1.0));
  ad::Var part_mean = ad::concat(mean_elems);

  // part 2: two-bin Gaussian color histogram per channel, plus a bias slot
  // so the part keeps a nonzero norm when every pixel is far out of range
  std::vector<ad::Var> hist_elems;
  const double bw = 0.5;
  const double inv_two_bw2 = 1.0 / (2.0 * bw * bw);
  for (int ch = 0; ch < c; ++ch) {
    ad::Var plane = ad::slice(x, ch * hw, hw);
    for (double ctr : {-0.5, 0.5}) {
      ad::Var d = ad::adds(plane, -ctr);
      hist_elems.push_back(ad::mean(ad::exp(ad::muls(ad::square(d), -inv_two_bw2))));
    }
  }
  hist_elems.push_back(tape.constant(1.0));
  ad::Var part_hist = ad::concat(hist_elems);

  return embed_ensemble(tape, {part_mean, part_hist});
}

const std::vector<std::pair<std::string, Eigen::Vector3d>>& ToyColorEmbedder::vocabulary() {
  static const std::vector<std::pair<std::string, Eigen::Vector3d>> vocab = {
      {"red", {1, -1, -1}},    {"green", {-1, 1, -1}}, {"blue", {-1, -1, 1}},
      {"yellow", {1, 1, -1}},  {"cyan", {-1, 1, 1}},   {"magenta", {1, -1, 1}},
      {"white", {1, 1, 1}},    {"black", {-1, -1, -1}}, {"gray", {0, 0, 0}},
      {"orange", {1, 0, -1}},
  };
  return vocab;
}

EmbeddingVector ToyColorEmbedder::embed_text(const std::string& prompt) const {
  if (prompt.empty()) throw InvalidArgument("embed_text: empty prompt");
  std::istringstream is(prompt);
  std::string word;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(embed_dim());
  int found = 0;
  while (is >> word) {
    for (const auto& [name, rgb] : vocabulary()) {
      if (word == name) {
        Image solid(8, 8, channels_);
        for (int ch = 0; ch < channels_; ++ch)
          solid.data.segment(std::ptrdiff_t(ch) * 64, 64).setConstant(rgb[std::min(ch, 2)]);
        acc += embed_image(solid).v;
        ++found;
        break;
      }
    }
  }
  if (found == 0)
    throw InvalidArgument("embed_text: no known color word in prompt '" + prompt +
                          "' (toy vocabulary: red green blue yellow cyan magenta white black gray orange)");
  EmbeddingVector out;
  out.v = acc / acc.norm();
  out.normalized = true;
  return out;
}

Eigen::VectorXd IdentityEmbedder::embed(const Image& x) const {
  ad::Tape tape;
  ad::Var e = embed(tape, tape.constant(x.data), x.h, x.w, x.c);
  return tape.val(e).matrix();
}

ad::Var ToyIdentityEmbedder::embed(ad::Tape& tape, ad::Var x, int h, int w, int c) const {
  const int hw = h * w;
  // grayscale
  auto idx = std::make_shared<std::vector<int>>();
  auto wts = std::make_shared<std::vector<double>>();
  for (int q = 0; q < hw; ++q)
    for (int ch = 0; ch < c; ++ch) {
      idx->push_back(ch * hw + q);
      wts->push_back(1.0 / c);
    }
  ad::Var gray = ad::lincomb_gather(x, idx, wts, c, hw);
  if (h % factor_ != 0 || w % factor_ != 0)
    throw InvalidArgument("identity embedder: size not divisible by downsample factor");
  WarpPlan down = make_box_downsample_plan(h, w, 1, factor_);
  return down.apply(tape, gray);
}

// ---------- augmentation ----------

Image ViewPlan::apply(const Image& x) const {
  Image out = warp.apply(x);
  if (noise_alpha > 0.0) out.data = (1.0 - noise_alpha) * out.data + noise_alpha * noise;
  return out;
}

ad::Var ViewPlan::apply(ad::Tape& tape, ad::Var x) const {
  ad::Var out = warp.apply(tape, x);
  if (noise_alpha > 0.0)
    out = ad::add(ad::muls(out, 1.0 - noise_alpha), tape.constant(Eigen::ArrayXd(noise_alpha * noise)));
  return out;
}

std::vector<ViewPlan> make_view_plans(int h, int w, int c, int M, RngStream& rng,
                                      const AugmentConfig& cfg) {
  if (M < 1) throw InvalidArgument("augment: M must be >= 1");
  std::vector<ViewPlan> plans;
  plans.reserve(M);
  if (cfg.identity_only) {
    for (int m = 0; m < M; ++m) plans.push_back(ViewPlan{make_identity_plan(h, w, c), 0.0, {}});
    return plans;
  }
  for (int m = 0; m + 1 < M; ++m) {
    double scale = cfg.crop_min + (1.0 - cfg.crop_min) * rng.uniform();
    double ang = (2.0 * rng.uniform() - 1.0) * cfg.max_rotate_deg * M_PI / 180.0;
    double tx = (2.0 * rng.uniform() - 1.0) * cfg.max_translate;
    double ty = (2.0 * rng.uniform() - 1.0) * cfg.max_translate;
    bool flip = rng.uniform() < cfg.flip_prob;
    Eigen::Matrix2d rot;
    rot << std::cos(ang), -std::sin(ang), std::sin(ang), std::cos(ang);
    Eigen::Matrix2d a = rot * scale;
    if (flip) a.col(0) *= -1.0;
    plans.push_back(ViewPlan{make_affine_plan(h, w, c, a, Eigen::Vector2d(tx, ty)), 0.0, {}});
  }
  // final view: the image itself blended with Gaussian noise
  ViewPlan noisy;
  noisy.warp = make_identity_plan(h, w, c);
  noisy.noise_alpha = cfg.noise_mix;
  noisy.noise = rng.normal_array(h * w * c);
  plans.push_back(std::move(noisy));
  return plans;
}

std::vector<Image> augment(const Image& x, int M, std::uint64_t seed, const AugmentConfig& cfg) {
  RngStream rng(seed);
  std::vector<Image> out;
  out.reserve(M);
  for (const ViewPlan& p : make_view_plans(x.h, x.w, x.c, M, rng, cfg)) out.push_back(p.apply(x));
  return out;
}

}  // namespace sit
