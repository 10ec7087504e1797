#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "sit/errors.hpp"
#include "sit/score_model.hpp"
#include "sit/toy_world.hpp"
#include "test_util.hpp"

using namespace sit;
using sit::testutil::finite_difference;
using sit::testutil::grad_rel_error;
using sit::testutil::random_image;

TEST_CASE("analytic Gaussian score matches its closed form") {
  NoiseSchedule s = build_schedule(100, 1e-3, 0.05);
  Image mean = Image::constant(3, 3, 1, 0.2);
  AnalyticGaussianScore score(s, mean, 0.3);
  Image x = random_image(3, 3, 1, 3);
  for (int t : {1, 40, 100}) {
    Image eps = score.predict(x, t);
    double ab = s.alpha_bar(t);
    double denom = ab * 0.09 + 1.0 - ab;
    for (int i = 0; i < x.size(); ++i) {
      double want = std::sqrt(1.0 - ab) * (x.data[i] - std::sqrt(ab) * 0.2) / denom;
      CHECK(eps.data[i] == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("time features") {
  NoiseSchedule s = build_schedule(10, 0.01, 0.1);
  Eigen::Array4d f = time_features(s, 5);
  CHECK(f[0] == doctest::Approx(std::sqrt(s.alpha_bar(5))));
  CHECK(f[1] == doctest::Approx(std::sqrt(1.0 - s.alpha_bar(5))));
  CHECK(f[2] == doctest::Approx(s.alpha_bar(5)));
  CHECK(f[3] == 1.0);
}

TEST_CASE("toy conv score is deterministic and shape-checked") {
  NoiseSchedule s = build_schedule(100, 1e-3, 0.05);
  ToyConvScore model(s, ToyScoreWeights::random_init(12, 3, 77));
  Image x = random_image(8, 8, 3, 5);
  Image a = model.predict(x, 30), b = model.predict(x, 30);
  CHECK(bitwise_equal(a, b));
  CHECK(a.finite());
  Image gray = random_image(8, 8, 1, 6);
  CHECK_THROWS_AS(model.predict(gray, 30), InvalidArgument);
}

TEST_CASE("toy conv net gradient w.r.t. the input matches finite differences") {
  NoiseSchedule s = build_schedule(50, 1e-3, 0.05);
  ToyConvScore model(s, ToyScoreWeights::random_init(8, 3, 11));
  Image x = random_image(6, 6, 3, 7);
  auto scalar_out = [&](const Eigen::ArrayXd& xv) {
    ad::Tape t;
    ad::Var v = t.input(xv);
    ad::Var eps = model.predict(t, v, 6, 6, 3, 20);
    return t.scalar(ad::sum(ad::square(eps)));
  };
  ad::Tape t;
  ad::Var v = t.input(x.data);
  ad::Var eps = model.predict(t, v, 6, 6, 3, 20);
  ad::Var loss = ad::sum(ad::square(eps));
  t.backward(loss);
  CHECK(grad_rel_error(t.grad(v), finite_difference(scalar_out, x.data)) < 1e-5);
}

TEST_CASE("toy conv net gradient w.r.t. the weights matches finite differences") {
  NoiseSchedule s = build_schedule(50, 1e-3, 0.05);
  ToyScoreWeights w = ToyScoreWeights::random_init(6, 3, 13);
  Im2colCache cache;
  Image x = random_image(4, 4, 3, 17);
  Eigen::Array4d tf = time_features(s, 25);

  auto loss_with = [&](const ToyScoreWeights& wts) {
    ad::Tape t;
    std::vector<ad::Var> wv;
    ToyScoreWeights copy = wts;
    for (auto* p : copy.params()) wv.push_back(t.input(*p));
    ad::Var out = toy_conv_forward(t, wv, 6, t.constant(x.data), 4, 4, 3, tf, cache);
    return t.scalar(ad::mean(ad::square(out)));
  };

  ad::Tape t;
  std::vector<ad::Var> wv;
  for (auto* p : w.params()) wv.push_back(t.input(*p));
  ad::Var out = toy_conv_forward(t, wv, 6, t.constant(x.data), 4, 4, 3, tf, cache);
  t.backward(ad::mean(ad::square(out)));

  // spot-check two parameter blocks (w2 and the time projection wt1)
  for (int block : {3, 2}) {
    Eigen::ArrayXd g_fd = finite_difference(
        [&](const Eigen::ArrayXd& pv) {
          ToyScoreWeights probe = w;
          *probe.params()[block] = pv;
          return loss_with(probe);
        },
        *w.params()[block]);
    CHECK(grad_rel_error(t.grad(wv[block]), g_fd) < 1e-5);
  }
}

TEST_CASE("checkpoint save/load round trip preserves predictions") {
  NoiseSchedule s = build_schedule(64, 1e-3, 0.08);
  ToyConvScore model(s, ToyScoreWeights::random_init(10, 3, 21));
  auto path = std::filesystem::temp_directory_path() / "sit_test_score.bin";
  model.save(path);
  ToyConvScore loaded = ToyConvScore::load(path);
  CHECK(loaded.base_schedule().T == 64);
  Image x = random_image(8, 8, 3, 23);
  CHECK(bitwise_equal(model.predict(x, 40), loaded.predict(x, 40)));
  std::filesystem::remove(path);

  CHECK_THROWS_AS(ToyConvScore::load("/nonexistent/score.bin"), RuntimeFailure);
  auto junk = std::filesystem::temp_directory_path() / "sit_junk.bin";
  {
    std::FILE* f = std::fopen(junk.string().c_str(), "wb");
    std::fputs("not a checkpoint", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(ToyConvScore::load(junk), RuntimeFailure);
  std::filesystem::remove(junk);
}

TEST_CASE("short training run reduces the denoising loss") {
  toy::TrainConfig cfg;
  cfg.steps = 60;
  cfg.batch = 4;
  cfg.channels = 8;
  cfg.dataset_size = 64;
  cfg.world.size = 16;
  cfg.progress_every = 0;
  std::ostringstream log;
  ToyConvScore model = toy::train_score_model(cfg, &log);

  // evaluate eps-MSE of the trained model vs a fresh random one
  ToyConvScore fresh(build_schedule(cfg.t_train, cfg.beta_min, cfg.beta_max),
                     ToyScoreWeights::random_init(cfg.channels, 3, 999));
  RngStream rng(31337);
  double trained_loss = 0.0, fresh_loss = 0.0;
  const NoiseSchedule& s = model.base_schedule();
  for (int i = 0; i < 16; ++i) {
    toy::Sample sample = toy::make_sample(rng, std::nullopt, cfg.world);
    int t = 1 + int(rng.next_u64() % 1000);
    Image eps(16, 16, 3);
    eps.data = rng.normal_array(eps.size());
    Image xt = q_sample(s, sample.img, t, eps);
    trained_loss += (model.predict(xt, t).data - eps.data).square().mean();
    fresh_loss += (fresh.predict(xt, t).data - eps.data).square().mean();
  }
  CHECK(trained_loss < fresh_loss);
}
