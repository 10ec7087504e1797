#include "sit/toy_world.hpp"

#include <algorithm>
#include <cmath>

#include "sit/errors.hpp"
#include "sit/schedule.hpp"

namespace sit::toy {

namespace {

double smoothstep(double e0, double e1, double v) {
  double t = std::clamp((v - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

Sample make_sample(RngStream& rng, std::optional<Domain> domain, const WorldConfig& cfg) {
  const int n = cfg.size;
  Sample s;
  s.domain = domain ? *domain : (rng.uniform() < 0.5 ? Domain::a : Domain::b);
  s.img = Image::constant(n, n, 3, cfg.background);
  s.mask.assign(std::size_t(n) * n, 0);

  double hot = cfg.hot_min + (cfg.hot_max - cfg.hot_min) * rng.uniform();
  double cold1 = cfg.cold_min + (cfg.cold_max - cfg.cold_min) * rng.uniform();
  double cold2 = cfg.cold_min + (cfg.cold_max - cfg.cold_min) * rng.uniform();
  // domain a: red-dominant; domain b: blue-dominant
  double fill[3];
  if (s.domain == Domain::a) {
    fill[0] = hot; fill[1] = cold1; fill[2] = cold2;
  } else {
    fill[0] = cold1; fill[1] = cold2; fill[2] = hot;
  }

  bool box = rng.uniform() < 0.5;
  double cx = n * (0.35 + 0.3 * rng.uniform());
  double cy = n * (0.35 + 0.3 * rng.uniform());
  double rx = n * (cfg.radius_min + (cfg.radius_max - cfg.radius_min) * rng.uniform());
  double ry = n * (cfg.radius_min + (cfg.radius_max - cfg.radius_min) * rng.uniform());

  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double d;  // signed distance-ish, positive inside
      if (box) {
        double dx = rx - std::abs(x + 0.5 - cx);
        double dy = ry - std::abs(y + 0.5 - cy);
        d = std::min(dx, dy);
      } else {
        double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        d = (1.0 - std::sqrt(dx * dx + dy * dy)) * std::min(rx, ry);
      }
      double a = smoothstep(-0.75, 0.75, d);
      if (a <= 0.0) continue;
      for (int ch = 0; ch < 3; ++ch) {
        double& v = s.img.at(y, x, ch);
        v = (1.0 - a) * v + a * fill[ch];
      }
      if (a > 0.5) s.mask[std::size_t(y) * n + x] = 1;
    }
  return s;
}

std::vector<std::uint8_t> extract_mask(const Image& img, const WorldConfig& cfg) {
  std::vector<std::uint8_t> mask(std::size_t(img.h) * img.w, 0);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double mx = img.at(y, x, 0);
      for (int ch = 1; ch < img.c; ++ch) mx = std::max(mx, img.at(y, x, ch));
      if (mx > cfg.mask_threshold) mask[std::size_t(y) * img.w + x] = 1;
    }
  return mask;
}

double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size()) throw InvalidArgument("mask_iou: size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]);
    uni += (a[i] || b[i]);
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

Eigen::VectorXd domain_centroid_cls(const StructureSemanticExtractor& ex, Domain domain, int count,
                                    std::uint64_t seed, const WorldConfig& cfg) {
  RngStream rng(seed);
  Eigen::VectorXd acc;
  for (int i = 0; i < count; ++i) {
    Sample s = make_sample(rng, domain, cfg);
    Eigen::VectorXd cls = ex.extract(s.img).cls;
    if (acc.size() == 0)
      acc = cls;
    else
      acc += cls;
  }
  return acc / count;
}

// ---------- training ----------

namespace {

struct Adam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<Eigen::ArrayXd> m, v;
  int step = 0;

  explicit Adam(const std::vector<Eigen::ArrayXd*>& params, double lr_) : lr(lr_) {
    for (auto* p : params) {
      m.push_back(Eigen::ArrayXd::Zero(p->size()));
      v.push_back(Eigen::ArrayXd::Zero(p->size()));
    }
  }

  void update(std::vector<Eigen::ArrayXd*>& params, const std::vector<Eigen::ArrayXd>& grads) {
    ++step;
    double c1 = 1.0 - std::pow(beta1, step), c2 = 1.0 - std::pow(beta2, step);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i].square();
      *params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
    }
  }
};

}  // namespace

ToyConvScore train_score_model(const TrainConfig& cfg, std::ostream* progress) {
  NoiseSchedule sched = build_schedule(cfg.t_train, cfg.beta_min, cfg.beta_max);
  RngStream data_rng(cfg.seed);
  std::vector<Image> dataset;
  dataset.reserve(cfg.dataset_size);
  for (int i = 0; i < cfg.dataset_size; ++i) dataset.push_back(make_sample(data_rng, std::nullopt, cfg.world).img);

  ToyScoreWeights weights = ToyScoreWeights::random_init(cfg.channels, 3, cfg.seed ^ 0x5157);
  auto params = weights.params();
  Adam opt(params, cfg.lr);
  Im2colCache cache;
  RngStream train_rng = RngStream(cfg.seed).fork(0x7261696e);

  const int n = cfg.world.size;
  double running = 0.0;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Eigen::ArrayXd> grads;
    for (auto* p : params) grads.push_back(Eigen::ArrayXd::Zero(p->size()));
    double batch_loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const Image& x0 = dataset[std::size_t(train_rng.next_u64() % dataset.size())];
      int t = 1 + int(train_rng.next_u64() % std::uint64_t(cfg.t_train));
      Eigen::ArrayXd eps = train_rng.normal_array(x0.size());
      double ab = sched.alpha_bar(t);
      Eigen::ArrayXd xt = std::sqrt(ab) * x0.data + std::sqrt(1.0 - ab) * eps;

      ad::Tape tape;
      std::vector<ad::Var> wv;
      for (auto* p : params) wv.push_back(tape.input(*p));
      ad::Var pred = toy_conv_forward(tape, wv, cfg.channels, tape.constant(xt), n, n, 3,
                                      time_features(sched, t), cache);
      ad::Var loss = ad::mean(ad::square(ad::sub(pred, tape.constant(eps))));
      tape.backward(loss);
      batch_loss += tape.scalar(loss);
      for (std::size_t i = 0; i < params.size(); ++i) grads[i] += tape.grad(wv[i]);
    }
    for (auto& g : grads) g /= cfg.batch;
    opt.update(params, grads);
    running += batch_loss / cfg.batch;
    if (progress && cfg.progress_every > 0 && (step + 1) % cfg.progress_every == 0) {
      *progress << "step " << (step + 1) << "/" << cfg.steps << "  eps-mse "
                << running / cfg.progress_every << "\n";
      running = 0.0;
    }
  }
  return ToyConvScore(std::move(sched), std::move(weights));
}

}  // namespace sit::toy
