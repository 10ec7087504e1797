#include "sit/score_model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "sit/errors.hpp"
#include "sit/rng.hpp"

namespace sit {

Image ScoreModel::predict(const Image& x, int t) const {
  ad::Tape tape;
  ad::Var eps = predict(tape, tape.constant(x.data), x.h, x.w, x.c, t);
  Image out(x.h, x.w, x.c);
  out.data = tape.val(eps);
  return out;
}

// ---------- analytic ----------

AnalyticGaussianScore::AnalyticGaussianScore(NoiseSchedule base, Image mean, double stddev)
    : base_(std::move(base)), mean_(std::move(mean)), stddev_(stddev) {
  if (stddev < 0) throw InvalidArgument("stddev must be >= 0");
}

ad::Var AnalyticGaussianScore::predict(ad::Tape& tape, ad::Var x, int h, int w, int c, int t) const {
  if (h != mean_.h || w != mean_.w || c != mean_.c)
    throw InvalidArgument("analytic score: shape mismatch with mean image");
  double ab = base_.alpha_bar(t);
  double denom = ab * stddev_ * stddev_ + 1.0 - ab;
  ad::Var centered = ad::sub(x, tape.constant(Eigen::ArrayXd(std::sqrt(ab) * mean_.data)));
  return ad::muls(centered, std::sqrt(1.0 - ab) / denom);
}

// ---------- im2col ----------

std::shared_ptr<const std::vector<int>> Im2colCache::get(int h, int w, int c) const {
  std::uint64_t key = (std::uint64_t(h) << 40) | (std::uint64_t(w) << 16) | std::uint64_t(c);
  std::scoped_lock lock(mu_);
  auto it = plans_.find(key);
  if (it != plans_.end()) return it->second;
  // rows: ci*9 + (dy*3+dx); cols: pixel index; zero padding via -1
  auto plan = std::make_shared<std::vector<int>>(std::size_t(c) * 9 * h * w);
  const int hw = h * w;
  std::size_t pos = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            int sy = y + dy, sx = x + dx;
            (*plan)[pos++] =
                (sy >= 0 && sy < h && sx >= 0 && sx < w) ? ci * hw + sy * w + sx : -1;
          }
  plans_[key] = plan;
  return plan;
}

// ---------- toy conv net ----------

ToyScoreWeights ToyScoreWeights::random_init(int channels, int image_channels, std::uint64_t seed) {
  RngStream rng(seed);
  auto init = [&rng](int rows, int cols, double scale) {
    Eigen::ArrayXd w = rng.normal_array(rows * cols);
    return Eigen::ArrayXd(w * scale);
  };
  ToyScoreWeights w;
  w.channels = channels;
  w.image_channels = image_channels;
  const int k1 = image_channels * 9, k2 = channels * 9;
  w.w1 = init(channels, k1, std::sqrt(2.0 / k1));
  w.b1 = Eigen::ArrayXd::Zero(channels);
  w.wt1 = init(channels, 4, 0.01);
  w.w2 = init(channels, k2, std::sqrt(2.0 / k2));
  w.b2 = Eigen::ArrayXd::Zero(channels);
  w.wt2 = init(channels, 4, 0.01);
  w.w3 = init(image_channels, k2, std::sqrt(2.0 / k2));
  w.b3 = Eigen::ArrayXd::Zero(image_channels);
  return w;
}

std::vector<Eigen::ArrayXd*> ToyScoreWeights::params() {
  return {&w1, &b1, &wt1, &w2, &b2, &wt2, &w3, &b3};
}

Eigen::Array4d time_features(const NoiseSchedule& base, int t) {
  double ab = base.alpha_bar(t);
  return {std::sqrt(ab), std::sqrt(1.0 - ab), ab, 1.0};
}

ad::Var toy_conv_forward(ad::Tape& tape, const std::vector<ad::Var>& wv, int channels, ad::Var x,
                         int h, int w, int c, const Eigen::Array4d& tfeat, const Im2colCache& cache) {
  if (wv.size() != 8) throw InvalidArgument("toy_conv_forward: expected 8 weight vars");
  const int hw = h * w;
  ad::Var tf = tape.constant(Eigen::ArrayXd(tfeat));

  ad::Var p1 = ad::gather(x, cache.get(h, w, c));
  ad::Var h1 = ad::matmul(wv[0], channels, c * 9, p1, hw);
  ad::Var bias1 = ad::add(wv[1], ad::matmul(wv[2], channels, 4, tf, 1));
  ad::Var a1 = ad::silu(ad::add_rowwise(h1, channels, hw, bias1));

  ad::Var p2 = ad::gather(a1, cache.get(h, w, channels));
  ad::Var h2 = ad::matmul(wv[3], channels, channels * 9, p2, hw);
  ad::Var bias2 = ad::add(wv[4], ad::matmul(wv[5], channels, 4, tf, 1));
  ad::Var a2 = ad::silu(ad::add_rowwise(h2, channels, hw, bias2));

  ad::Var p3 = ad::gather(a2, cache.get(h, w, channels));
  ad::Var out = ad::matmul(wv[6], c, channels * 9, p3, hw);
  return ad::add_rowwise(out, c, hw, wv[7]);
}

ToyConvScore::ToyConvScore(NoiseSchedule base, ToyScoreWeights weights)
    : base_(std::move(base)), weights_(std::move(weights)) {}

ad::Var ToyConvScore::predict(ad::Tape& tape, ad::Var x, int h, int w, int c, int t) const {
  if (c != weights_.image_channels) throw InvalidArgument("toy score: channel mismatch");
  ToyScoreWeights& wts = const_cast<ToyScoreWeights&>(weights_);
  std::vector<ad::Var> wv;
  for (Eigen::ArrayXd* p : wts.params()) wv.push_back(tape.constant(*p));
  return toy_conv_forward(tape, wv, weights_.channels, x, h, w, c, time_features(base_, t), cache_);
}

// ---------- serialization ----------

namespace {

void write_array(std::ofstream& os, const Eigen::ArrayXd& a) {
  std::int64_t n = a.size();
  os.write(reinterpret_cast<const char*>(&n), sizeof n);
  os.write(reinterpret_cast<const char*>(a.data()), n * sizeof(double));
}

Eigen::ArrayXd read_array(std::ifstream& is) {
  std::int64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!is || n < 0) throw RuntimeFailure("score checkpoint: truncated array header");
  Eigen::ArrayXd a(n);
  is.read(reinterpret_cast<char*>(a.data()), n * sizeof(double));
  if (!is) throw RuntimeFailure("score checkpoint: truncated array data");
  return a;
}

constexpr char kMagic[8] = {'S', 'I', 'T', 'S', 'C', 'R', '0', '1'};

}  // namespace

void ToyConvScore::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot write score checkpoint: " + path.string());
  os.write(kMagic, sizeof kMagic);
  std::int32_t meta[3] = {std::int32_t(weights_.channels), std::int32_t(weights_.image_channels),
                          std::int32_t(base_.T)};
  os.write(reinterpret_cast<const char*>(meta), sizeof meta);
  write_array(os, Eigen::ArrayXd(Eigen::Map<const Eigen::ArrayXd>(base_.betas.data(), base_.T)));
  ToyScoreWeights& wts = const_cast<ToyScoreWeights&>(weights_);
  for (Eigen::ArrayXd* p : wts.params()) write_array(os, *p);
  if (!os) throw RuntimeFailure("short write on score checkpoint: " + path.string());
}

ToyConvScore ToyConvScore::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot open score checkpoint: " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw RuntimeFailure("not a score checkpoint: " + path.string());
  std::int32_t meta[3];
  is.read(reinterpret_cast<char*>(meta), sizeof meta);
  if (!is) throw RuntimeFailure("truncated score checkpoint: " + path.string());
  Eigen::ArrayXd betas = read_array(is);
  if (betas.size() != meta[2]) throw RuntimeFailure("score checkpoint: schedule length mismatch");
  NoiseSchedule base =
      build_schedule_from_betas(std::vector<double>(betas.data(), betas.data() + betas.size()),
                                VarianceRule::beta);
  ToyScoreWeights w;
  w.channels = meta[0];
  w.image_channels = meta[1];
  for (Eigen::ArrayXd* p : w.params()) *p = read_array(is);
  return ToyConvScore(std::move(base), std::move(w));
}

}  // namespace sit
