#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sit/errors.hpp"
#include "sit/extractors.hpp"
#include "sit/guidance.hpp"
#include "test_util.hpp"

using namespace sit;
using sit::testutil::finite_difference;
using sit::testutil::grad_rel_error;
using sit::testutil::random_image;

namespace {

FeatureBundle bundle_from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  FeatureBundle b;
  b.keys.resize(rows.size(), rows.begin()->size());
  int i = 0;
  for (const auto& r : rows) {
    int j = 0;
    for (double v : r) b.keys(i, j++) = v;
    ++i;
  }
  b.cls = Eigen::VectorXd::Zero(2);
  return b;
}

FeatureBundle random_bundle(int n, int d, std::uint64_t seed) {
  RngStream rng(seed);
  FeatureBundle b;
  b.keys.resize(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) b.keys(i, j) = rng.normal();
  b.cls = rng.normal_array(3).matrix();
  return b;
}

double cosine_plain(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.dot(b) / (a.norm() * b.norm());
}

}  // namespace

TEST_CASE("self_similarity basics") {
  FeatureBundle same = bundle_from_rows({{1, 2}, {1, 2}, {1, 2}});
  Eigen::MatrixXd s = self_similarity(same);
  CHECK((s.array() - 1.0).abs().maxCoeff() < 1e-12);

  FeatureBundle ortho = bundle_from_rows({{1, 0}, {0, 2}});
  Eigen::MatrixXd so = self_similarity(ortho);
  CHECK(so(0, 0) == doctest::Approx(1.0));
  CHECK(so(1, 1) == doctest::Approx(1.0));
  CHECK(so(0, 1) == doctest::Approx(0.0));

  FeatureBundle deg45 = bundle_from_rows({{1, 0}, {1, 1}});
  CHECK(self_similarity(deg45)(0, 1) == doctest::Approx(0.70711).epsilon(1e-4));

  FeatureBundle zero = bundle_from_rows({{0, 0}, {1, 0}});
  CHECK_THROWS_AS(self_similarity(zero), InvalidArgument);
}

TEST_CASE("self_similarity is symmetric with unit diagonal and bounded entries") {
  FeatureBundle b = random_bundle(9, 5, 21);
  Eigen::MatrixXd s = self_similarity(b);
  for (int i = 0; i < 9; ++i) {
    CHECK(s(i, i) == doctest::Approx(1.0).epsilon(1e-10));
    for (int j = 0; j < 9; ++j) {
      CHECK(s(i, j) == doctest::Approx(s(j, i)).epsilon(1e-12));
      CHECK(s(i, j) <= 1.0 + 1e-12);
      CHECK(s(i, j) >= -1.0 - 1e-12);
    }
  }
}

TEST_CASE("l_ssim values") {
  FeatureBundle a = random_bundle(6, 4, 22);
  CHECK(l_ssim(a, a) == doctest::Approx(0.0));

  FeatureBundle same = bundle_from_rows({{1, 1}, {2, 2}});   // S = ones
  FeatureBundle ortho = bundle_from_rows({{1, 0}, {0, 1}});  // S = I
  CHECK(l_ssim(same, ortho) == doctest::Approx(std::sqrt(2.0)));

  // elementwise-difference oracle on random 8-key bundles
  FeatureBundle x = random_bundle(8, 5, 23), y = random_bundle(8, 5, 24);
  Eigen::MatrixXd sx = self_similarity(x), sy = self_similarity(y);
  double want = std::sqrt((sx - sy).array().square().sum());
  CHECK(std::abs(l_ssim(x, y) - want) < 1e-10);

  // symmetry and non-negativity
  CHECK(l_ssim(x, y) == doctest::Approx(l_ssim(y, x)).epsilon(1e-12));
  CHECK(l_ssim(x, y) >= 0.0);
}

TEST_CASE("l_cont worked example: two orthogonal keys, identical bundles, tau=1") {
  FeatureBundle b = bundle_from_rows({{1, 0}, {0, 1}});
  double got = l_cont(b, b, 1.0);
  CHECK(got == doctest::Approx(0.62652).epsilon(1e-5));
  CHECK(got == doctest::Approx(2.0 * std::log(1.0 + std::exp(-1.0))).epsilon(1e-10));
}

TEST_CASE("l_cont brute-force oracle and properties") {
  FeatureBundle src = random_bundle(6, 4, 31), out = random_bundle(6, 4, 32);
  const double tau = 0.35;
  // naive double-loop softmax
  double want = 0.0;
  for (int i = 0; i < 6; ++i) {
    double denom = 0.0;
    for (int j = 0; j < 6; ++j)
      denom += std::exp(cosine_plain(out.keys.row(i), src.keys.row(j)) / tau);
    double pos = std::exp(cosine_plain(out.keys.row(i), src.keys.row(i)) / tau);
    want += -std::log(pos / denom);
  }
  CHECK(std::abs(l_cont(src, out, tau) - want) < 1e-8);
  CHECK(l_cont(src, out, tau) >= 0.0);

  FeatureBundle one = random_bundle(1, 4, 33);
  CHECK_THROWS_AS((void)l_cont(one, one, tau), InvalidArgument);
}

TEST_CASE("l_cont decreases as the positive pair gets closer") {
  // rotate out-key 0 toward src-key 0 while negatives stay fixed
  FeatureBundle src = bundle_from_rows({{1, 0}, {0, 1}, {-1, 1}});
  double prev = -1.0;
  for (double ang : {1.2, 0.8, 0.4, 0.1}) {
    FeatureBundle out = src;
    out.keys(0, 0) = std::cos(ang);
    out.keys(0, 1) = std::sin(ang);
    double v = l_cont(src, out, 0.5);
    if (prev >= 0.0) CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("embed_ensemble") {
  Eigen::VectorXd p1(2), p2(2);
  p1 << 3, 0;
  p2 << 0, 0.5;
  EmbeddingVector single = embed_ensemble({p1});
  CHECK(single.v.norm() == doctest::Approx(1.0));
  CHECK(single.v[0] == doctest::Approx(1.0));

  EmbeddingVector both = embed_ensemble({p1, p2});
  CHECK(both.v.size() == 4);
  CHECK(both.v.norm() == doctest::Approx(1.0).epsilon(1e-12));
  // parts are normalized before concatenation: each contributes norm 1/sqrt(2)
  CHECK(both.v.head(2).norm() == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));

  RngStream rng(41);
  std::vector<Eigen::VectorXd> parts;
  for (int i = 0; i < 5; ++i) parts.push_back(rng.normal_array(7).matrix());
  CHECK(embed_ensemble(parts).v.norm() == doctest::Approx(1.0).epsilon(1e-6));

  CHECK_THROWS_AS(embed_ensemble({}), InvalidArgument);
  CHECK_THROWS_AS(embed_ensemble({Eigen::VectorXd::Zero(3)}), InvalidArgument);
}

TEST_CASE("l_clip trivial alignments") {
  EmbeddingVector trg{Eigen::Vector2d(1, 0), true};
  EmbeddingVector zero_img{Eigen::Vector2d(0, 1), true};
  EmbeddingVector zero_txt{Eigen::Vector2d(0, 1), true};

  CHECK(l_clip({trg}, trg, zero_img, zero_txt, 0.0, 0.0) == doctest::Approx(-1.0));
  EmbeddingVector ortho{Eigen::Vector2d(0, 1), true};
  CHECK(l_clip({ortho}, trg, zero_img, zero_txt, 0.0, 0.0) == doctest::Approx(0.0));
}

TEST_CASE("l_clip directional mixing worked example") {
  EmbeddingVector trg{Eigen::Vector2d(1, 0), true};
  EmbeddingVector src_img{Eigen::Vector2d(0, 1), true};
  EmbeddingVector src_txt{Eigen::Vector2d(0, 1), true};
  EmbeddingVector view{Eigen::Vector2d(1, 0), true};
  double got = l_clip({view}, trg, src_img, src_txt, 0.4, 0.2);
  CHECK(got == doctest::Approx(-0.98058).epsilon(1e-5));
  CHECK(got == doctest::Approx(-1.0 / std::sqrt(1.04)).epsilon(1e-10));
}

TEST_CASE("l_clip stays in [-1,1] and ignores positive rescaling before normalization") {
  RngStream rng(47);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd a = rng.normal_array(5).matrix(), b = rng.normal_array(5).matrix(),
                    c = rng.normal_array(5).matrix(), v = rng.normal_array(5).matrix();
    EmbeddingVector ea = embed_ensemble({a}), eb = embed_ensemble({b}), ec = embed_ensemble({c}),
                    ev = embed_ensemble({v});
    double l = l_clip({ev}, ea, eb, ec, 0.4, 0.2);
    CHECK(l >= -1.0 - 1e-12);
    CHECK(l <= 1.0 + 1e-12);
    // rescaling raw vectors before the ensemble normalization changes nothing
    EmbeddingVector ea2 = embed_ensemble({Eigen::VectorXd(7.5 * a)});
    EmbeddingVector ev2 = embed_ensemble({Eigen::VectorXd(0.3 * v)});
    CHECK(l_clip({ev2}, ea2, eb, ec, 0.4, 0.2) == doctest::Approx(l).epsilon(1e-10));
  }
}

TEST_CASE("l_sty values") {
  ToyPatchExtractor ex(2);
  Image x = random_image(4, 4, 3, 51);
  FeatureBundle bx = ex.extract(x);
  CHECK(l_sty(bx, bx, x, x, 1.5) == doctest::Approx(0.0));

  FeatureBundle a, b;
  a.cls = Eigen::Vector2d(0, 0);
  b.cls = Eigen::Vector2d(3, 4);
  Image img = Image::zeros(2, 2, 1);
  CHECK(l_sty(a, b, img, img, 0.0) == doctest::Approx(5.0));

  // sum-of-norms oracle
  FeatureBundle t1, t2;
  RngStream rng(52);
  t1.cls = rng.normal_array(6).matrix();
  t2.cls = rng.normal_array(6).matrix();
  Image xa = random_image(3, 3, 1, 53), xb = random_image(3, 3, 1, 54);
  double want = (t1.cls - t2.cls).norm() + 1.5 * std::sqrt((xa.data - xb.data).square().sum());
  CHECK(std::abs(l_sty(t1, t2, xa, xb, 1.5) - want) < 1e-10);
}

TEST_CASE("l_sem values") {
  Eigen::VectorXd a = Eigen::Vector2d(0, 0), b = Eigen::Vector2d(3, 4);
  CHECK(l_sem(a, a) == doctest::Approx(0.0));
  CHECK(l_sem(a, b) == doctest::Approx(-5.0));
  RngStream rng(55);
  for (int i = 0; i < 50; ++i) {
    Eigen::VectorXd u = rng.normal_array(4).matrix(), v = rng.normal_array(4).matrix();
    CHECK(l_sem(u, v) <= 0.0);
  }
}

TEST_CASE("l_rng values") {
  Image in_range = random_image(4, 4, 3, 61, 0.3);
  CHECK(l_rng(clamp(in_range, -1.0, 1.0)) == 0.0);

  Image one_pixel(1, 1, 1);
  one_pixel.data[0] = 1.5;
  CHECK(l_rng(one_pixel) == doctest::Approx(0.25));

  Image x = random_image(5, 5, 3, 62, 1.1);
  double want = 0.0;
  for (int i = 0; i < x.size(); ++i) {
    double v = std::max(std::abs(x.data[i]) - 1.0, 0.0);
    want += v * v;
  }
  want /= x.size();
  CHECK(std::abs(l_rng(x) - want) < 1e-12);
}

// ---- total loss ----

namespace {

struct TotalFixture {
  ToyPatchExtractor ex{2};
  ToyColorEmbedder em{3};
  Image x_src, x_trg, x;
  FeatureBundle src_bundle, trg_bundle;
  Eigen::MatrixXd s_src;
  Eigen::VectorXd v_trg, prev_cls;

  TotalFixture() {
    x_src = random_image(8, 8, 3, 71, 0.4);
    x_trg = random_image(8, 8, 3, 72, 0.4);
    x = random_image(8, 8, 3, 73, 0.4);
    src_bundle = ex.extract(x_src);
    trg_bundle = ex.extract(x_trg);
    s_src = self_similarity(src_bundle);
    v_trg = embedding_direction_target(em.embed_text("blue"), em.embed_image(x_src),
                                       em.embed_text("red"), 0.4, 0.2);
    prev_cls = ex.extract(random_image(8, 8, 3, 74, 0.4)).cls;
  }

  // Evaluates the mode total on image value xv with augmentation fixed by seed.
  std::pair<double, LossTerms> eval(GuidanceMode mode, const GuidanceWeights& w,
                                    const Eigen::ArrayXd& xv, bool with_prev = true) {
    ad::Tape tape;
    ad::Var xvar = tape.input(xv);
    TotalLossRefs refs;
    TotalLossVars vars;
    vars.x0 = xvar;
    vars.out_bundle = ex.extract(tape, xvar, 8, 8, 3);
    refs.src_bundle = &src_bundle;
    refs.s_src = &s_src;
    if (mode == GuidanceMode::text) {
      RngStream aug_rng(99);
      AugmentConfig acfg;
      for (const ViewPlan& vp : make_view_plans(8, 8, 3, 4, aug_rng, acfg))
        vars.view_embeddings.push_back(em.embed_image(tape, vp.apply(tape, xvar), 8, 8, 3));
      refs.v_trg = &v_trg;
    } else {
      refs.trg_cls = &trg_bundle.cls;
      refs.x_trg = &x_trg.data;
    }
    if (with_prev) refs.prev_cls = &prev_cls;
    LossTerms terms;
    ad::Var total = total_loss(tape, mode, refs, vars, w, &terms);
    return {tape.scalar(total), terms};
  }
};

}  // namespace

TEST_CASE("total_loss: all weights zero gives zero") {
  TotalFixture f;
  GuidanceWeights w;
  w.lambda1 = w.lambda2 = w.lambda3 = w.lambda4 = w.lambda5 = 0.0;
  auto [total, terms] = f.eval(GuidanceMode::text, w, f.x.data);
  CHECK(total == 0.0);
  CHECK(terms.total == 0.0);
}

TEST_CASE("total_loss: lambda3-only text mode equals lambda3 * l_clip") {
  TotalFixture f;
  GuidanceWeights w;
  w.lambda1 = w.lambda2 = w.lambda4 = w.lambda5 = 0.0;
  w.lambda3 = 123.0;
  auto [total, terms] = f.eval(GuidanceMode::text, w, f.x.data);
  CHECK(total == doctest::Approx(123.0 * terms.style).epsilon(1e-12));

  // unweighted style term equals the standalone l_clip on the same views
  RngStream aug_rng(99);
  AugmentConfig acfg;
  std::vector<EmbeddingVector> views;
  for (const ViewPlan& vp : make_view_plans(8, 8, 3, 4, aug_rng, acfg))
    views.push_back(f.em.embed_image(vp.apply(f.x)));
  ad::Tape t2;
  std::vector<ad::Var> view_vars;
  for (const auto& e : views) view_vars.push_back(t2.constant(Eigen::ArrayXd(e.v.array())));
  double direct = t2.scalar(l_clip(t2, view_vars, f.v_trg));
  CHECK(terms.style == doctest::Approx(direct).epsilon(1e-10));
}

TEST_CASE("total_loss equals the hand-summed combination (both modes)") {
  TotalFixture f;
  GuidanceWeights w;  // full defaults
  for (GuidanceMode mode : {GuidanceMode::text, GuidanceMode::image}) {
    auto [total, terms] = f.eval(mode, w, f.x.data);
    double hand = w.lambda1 * terms.cont + w.lambda2 * terms.ssim + w.lambda3 * terms.style +
                  w.lambda4 * terms.sem + w.lambda5 * terms.rng;
    CHECK(total == doctest::Approx(hand).epsilon(1e-8));
    CHECK(terms.sem_active);
  }
}

TEST_CASE("total_loss scales linearly in each weight") {
  TotalFixture f;
  GuidanceWeights base;
  auto [t0, terms0] = f.eval(GuidanceMode::text, base, f.x.data);
  (void)t0;
  GuidanceWeights doubled = base;
  doubled.lambda2 *= 2.0;
  auto [t1, terms1] = f.eval(GuidanceMode::text, doubled, f.x.data);
  CHECK(t1 - t0 == doctest::Approx(base.lambda2 * terms0.ssim).epsilon(1e-8));
  CHECK(terms1.ssim == doctest::Approx(terms0.ssim).epsilon(1e-12));
}

TEST_CASE("total_loss without a previous cls omits the divergence term") {
  TotalFixture f;
  GuidanceWeights w;
  auto [total, terms] = f.eval(GuidanceMode::text, w, f.x.data, /*with_prev=*/false);
  (void)total;
  CHECK_FALSE(terms.sem_active);
  CHECK(terms.sem == 0.0);
}

TEST_CASE("total_loss rejects missing mode inputs") {
  TotalFixture f;
  GuidanceWeights w;
  ad::Tape tape;
  ad::Var xvar = tape.input(f.x.data);
  TotalLossVars vars;
  vars.x0 = xvar;
  vars.out_bundle = f.ex.extract(tape, xvar, 8, 8, 3);
  TotalLossRefs refs;  // everything missing
  LossTerms terms;
  CHECK_THROWS_AS((void)total_loss(tape, GuidanceMode::text, refs, vars, w, &terms),
                  InvalidArgument);
}

// ---- gradient checks through the toy extractor (8x8 images) ----

namespace {

// builder returns a Var; helper runs AD + FD comparison
void gradcheck(const std::function<ad::Var(ad::Tape&, ad::Var)>& build, const Eigen::ArrayXd& x0,
               double tol = 1e-4) {
  ad::Tape tape;
  ad::Var x = tape.input(x0);
  ad::Var loss = build(tape, x);
  tape.backward(loss);
  Eigen::ArrayXd g_ad = tape.grad(x);
  Eigen::ArrayXd g_fd = finite_difference(
      [&](const Eigen::ArrayXd& xv) {
        ad::Tape t2;
        ad::Var x2 = t2.input(xv);
        return t2.scalar(build(t2, x2));
      },
      x0);
  CHECK(grad_rel_error(g_ad, g_fd) < tol);
}

}  // namespace

TEST_CASE("loss gradients through the toy extractor match finite differences") {
  TotalFixture f;
  Eigen::ArrayXd x0 = f.x.data;  // scale 0.4 keeps |x| clear of the range-loss kink at 1
  ToyPatchExtractor& ex = f.ex;
  ToyColorEmbedder& em = f.em;

  SUBCASE("l_ssim") {
    gradcheck([&](ad::Tape& t, ad::Var x) {
      BundleVar b = ex.extract(t, x, 8, 8, 3);
      return l_ssim(t, f.s_src, b.keys, b.n, b.dk);
    }, x0);
  }
  SUBCASE("l_cont") {
    gradcheck([&](ad::Tape& t, ad::Var x) {
      BundleVar b = ex.extract(t, x, 8, 8, 3);
      return l_cont(t, f.src_bundle, b.keys, b.n, b.dk, 0.3);
    }, x0);
  }
  SUBCASE("l_clip through augmentation and the toy embedder") {
    gradcheck([&](ad::Tape& t, ad::Var x) {
      RngStream aug_rng(7);
      AugmentConfig acfg;
      std::vector<ad::Var> views;
      for (const ViewPlan& vp : make_view_plans(8, 8, 3, 3, aug_rng, acfg))
        views.push_back(em.embed_image(t, vp.apply(t, x), 8, 8, 3));
      return l_clip(t, views, f.v_trg);
    }, x0);
  }
  SUBCASE("l_sty") {
    gradcheck([&](ad::Tape& t, ad::Var x) {
      BundleVar b = ex.extract(t, x, 8, 8, 3);
      return l_sty(t, f.trg_bundle.cls, b.cls, f.x_trg.data, x, 1.5);
    }, x0);
  }
  SUBCASE("l_sem") {
    gradcheck([&](ad::Tape& t, ad::Var x) {
      BundleVar b = ex.extract(t, x, 8, 8, 3);
      return l_sem(t, b.cls, f.prev_cls);
    }, x0);
  }
  SUBCASE("l_rng") {
    Eigen::ArrayXd wide = 1.6 * x0;  // some entries beyond the unit range
    gradcheck([&](ad::Tape& t, ad::Var x) { return l_rng(t, x); }, wide);
  }
  SUBCASE("identity hook") {
    ToyIdentityEmbedder id(4);
    Eigen::VectorXd src_id = id.embed(f.x_src);
    gradcheck([&](ad::Tape& t, ad::Var x) {
      ad::Var e = id.embed(t, x, 8, 8, 3);
      return ad::norm2(ad::sub(e, t.constant(Eigen::ArrayXd(src_id.array()))));
    }, x0);
  }
  SUBCASE("total, text mode") {
    GuidanceWeights w;
    gradcheck([&](ad::Tape& t, ad::Var x) {
      TotalLossRefs refs;
      TotalLossVars vars;
      vars.x0 = x;
      vars.out_bundle = ex.extract(t, x, 8, 8, 3);
      refs.src_bundle = &f.src_bundle;
      refs.s_src = &f.s_src;
      RngStream aug_rng(13);
      AugmentConfig acfg;
      for (const ViewPlan& vp : make_view_plans(8, 8, 3, 3, aug_rng, acfg))
        vars.view_embeddings.push_back(em.embed_image(t, vp.apply(t, x), 8, 8, 3));
      refs.v_trg = &f.v_trg;
      refs.prev_cls = &f.prev_cls;
      return total_loss(t, GuidanceMode::text, refs, vars, w, nullptr);
    }, x0);
  }
  SUBCASE("total, image mode") {
    GuidanceWeights w;
    gradcheck([&](ad::Tape& t, ad::Var x) {
      TotalLossRefs refs;
      TotalLossVars vars;
      vars.x0 = x;
      vars.out_bundle = ex.extract(t, x, 8, 8, 3);
      refs.src_bundle = &f.src_bundle;
      refs.s_src = &f.s_src;
      refs.trg_cls = &f.trg_bundle.cls;
      refs.x_trg = &f.x_trg.data;
      refs.prev_cls = &f.prev_cls;
      return total_loss(t, GuidanceMode::image, refs, vars, w, nullptr);
    }, x0);
  }
}
