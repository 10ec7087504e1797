#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sit/autodiff.hpp"
#include "sit/errors.hpp"
#include "test_util.hpp"

using namespace sit;
using namespace sit::ad;
using sit::testutil::finite_difference;
using sit::testutil::grad_rel_error;

namespace {

// Gradient check of a tape-built scalar against central differences.
void check_gradient(const std::function<Var(Tape&, Var)>& build, const Eigen::ArrayXd& x0,
                    double tol = 1e-6) {
  Tape tape;
  Var x = tape.input(x0);
  Var loss = build(tape, x);
  tape.backward(loss);
  Eigen::ArrayXd g_ad = tape.grad(x);

  auto f = [&](const Eigen::ArrayXd& xv) {
    Tape t2;
    Var x2 = t2.input(xv);
    return t2.scalar(build(t2, x2));
  };
  Eigen::ArrayXd g_fd = finite_difference(f, x0);
  CHECK(grad_rel_error(g_ad, g_fd) < tol);
}

Eigen::ArrayXd arr(std::initializer_list<double> v) {
  Eigen::ArrayXd a(Eigen::Index(v.size()));
  Eigen::Index i = 0;
  for (double d : v) a[i++] = d;
  return a;
}

}  // namespace

TEST_CASE("elementwise forward values") {
  Tape t;
  Var a = t.input(arr({1.0, -2.0, 3.0}));
  Var b = t.input(arr({0.5, 4.0, -1.0}));
  CHECK(t.val(add(a, b))[1] == doctest::Approx(2.0));
  CHECK(t.val(mul(a, b))[2] == doctest::Approx(-3.0));
  CHECK(t.val(div(a, b))[0] == doctest::Approx(2.0));
  CHECK(t.val(relu(a))[1] == 0.0);
  CHECK(t.val(abs(a))[1] == doctest::Approx(2.0));
  CHECK(t.scalar(sum(a)) == doctest::Approx(2.0));
  CHECK(t.scalar(mean(b)) == doctest::Approx((0.5 + 4.0 - 1.0) / 3.0));
}

TEST_CASE("size mismatch rejected") {
  Tape t;
  Var a = t.input(Eigen::ArrayXd::Zero(3));
  Var b = t.input(Eigen::ArrayXd::Zero(4));
  CHECK_THROWS_AS((void)add(a, b), InvalidArgument);
}

TEST_CASE("gradients of smooth elementwise chains match finite differences") {
  Eigen::ArrayXd x0 = sit::testutil::random_image(2, 3, 1, 42).data + 2.5;  // keep positive for log/sqrt
  check_gradient([](Tape& t, Var x) { return sum(mul(exp(muls(x, 0.3)), log(x))); }, x0);
  check_gradient([](Tape& t, Var x) { return mean(square(sqrt(x))); }, x0);
  check_gradient([](Tape& t, Var x) { return sum(tanh(sigmoid(x))); }, x0);
  check_gradient([](Tape& t, Var x) { return sum(silu(adds(x, -2.0))); }, x0);
}

TEST_CASE("gradient accumulates over reused nodes") {
  // f(x) = sum(x*x) with the same node on both sides.
  Eigen::ArrayXd x0 = arr({1.0, -2.0, 0.5});
  Tape t;
  Var x = t.input(x0);
  Var loss = sum(mul(x, x));
  t.backward(loss);
  Eigen::ArrayXd g = t.grad(x);
  for (int i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx(2.0 * x0[i]));
}

TEST_CASE("matmul forward and gradient") {
  // A: 2x3, B: 3x2
  Eigen::ArrayXd a0 = arr({1, 2, 3, 4, 5, 6});
  Eigen::ArrayXd b0 = arr({7, 8, 9, 10, 11, 12});
  Tape t;
  Var a = t.input(a0);
  Var b = t.input(b0);
  Var m = matmul(a, 2, 3, b, 2);
  CHECK(t.val(m)[0] == doctest::Approx(1 * 7 + 2 * 9 + 3 * 11));
  CHECK(t.val(m)[3] == doctest::Approx(4 * 8 + 5 * 10 + 6 * 12));

  check_gradient(
      [&](Tape& tp, Var x) { return sum(square(matmul(x, 2, 3, tp.input(b0), 2))); }, a0);
  check_gradient(
      [&](Tape& tp, Var x) { return sum(square(matmul(tp.input(a0), 2, 3, x, 2))); }, b0);
}

TEST_CASE("matmul_nt equals matmul with transposed operand") {
  Eigen::ArrayXd a0 = sit::testutil::random_image(1, 6, 1, 1).data;
  Eigen::ArrayXd b0 = sit::testutil::random_image(1, 6, 1, 2).data;
  Tape t;
  Var a = t.input(a0);
  Var b = t.input(b0);
  // A: 2x3 times B(2x3)^T -> 2x2
  Var m = matmul_nt(a, 2, 3, b, 2);
  Eigen::ArrayXd bt(6);
  bt << b0[0], b0[3], b0[1], b0[4], b0[2], b0[5];
  Var m2 = matmul(a, 2, 3, t.input(bt), 2);
  for (int i = 0; i < 4; ++i) CHECK(t.val(m)[i] == doctest::Approx(t.val(m2)[i]).epsilon(1e-12));

  check_gradient([&](Tape& tp, Var x) { return sum(square(matmul_nt(x, 2, 3, x, 2))); }, a0);
}

TEST_CASE("row ops") {
  Eigen::ArrayXd m0 = arr({1, 2, 3, 4, 5, 6});  // 2x3
  Eigen::ArrayXd v0 = arr({10, 20});
  Tape t;
  Var m = t.input(m0);
  Var v = t.input(v0);
  CHECK(t.val(row_sum(m, 2, 3))[0] == doctest::Approx(6));
  CHECK(t.val(row_sum(m, 2, 3))[1] == doctest::Approx(15));
  CHECK(t.val(add_rowwise(m, 2, 3, v))[4] == doctest::Approx(25));
  CHECK(t.val(mul_rowwise(m, 2, 3, v))[1] == doctest::Approx(20));

  check_gradient([&](Tape& tp, Var x) { return sum(square(add_rowwise(x, 2, 3, tp.input(v0)))); },
                 m0);
  check_gradient([&](Tape& tp, Var x) { return sum(square(mul_rowwise(tp.input(m0), 2, 3, x))); },
                 v0);
  check_gradient([&](Tape& tp, Var x) { return sum(square(row_sum(x, 2, 3))); }, m0);
}

TEST_CASE("gather with padding and lincomb") {
  Eigen::ArrayXd x0 = arr({1, 2, 3, 4});
  auto idx = std::make_shared<const std::vector<int>>(std::vector<int>{3, -1, 0, 0});
  Tape t;
  Var x = t.input(x0);
  Var g = gather(x, idx);
  CHECK(t.val(g)[0] == 4);
  CHECK(t.val(g)[1] == 0);
  check_gradient([&](Tape& tp, Var v) { return sum(square(gather(v, idx))); }, x0);

  auto li = std::make_shared<const std::vector<int>>(std::vector<int>{0, 1, 2, -1});
  auto lw = std::make_shared<const std::vector<double>>(std::vector<double>{0.25, 0.75, 1.5, 9.0});
  Tape t2;
  Var y = t2.input(x0);
  Var out = lincomb_gather(y, li, lw, 2, 2);
  CHECK(t2.val(out)[0] == doctest::Approx(0.25 * 1 + 0.75 * 2));
  CHECK(t2.val(out)[1] == doctest::Approx(1.5 * 3));
  check_gradient([&](Tape& tp, Var v) { return sum(square(lincomb_gather(v, li, lw, 2, 2))); }, x0);

  auto ci = std::make_shared<const std::vector<int>>(std::vector<int>{0, 1, 2, 3, 1});
  auto cw = std::make_shared<const std::vector<double>>(std::vector<double>{1, 1, 0.5, 0.25, 2});
  auto co = std::make_shared<const std::vector<int>>(std::vector<int>{0, 2, 2, 5});
  Tape t3;
  Var z = t3.input(x0);
  Var out3 = lincomb_gather_csr(z, ci, cw, co);
  CHECK(t3.val(out3)[0] == doctest::Approx(3.0));
  CHECK(t3.val(out3)[1] == doctest::Approx(0.0));  // empty row
  CHECK(t3.val(out3)[2] == doctest::Approx(0.5 * 3 + 0.25 * 4 + 2 * 2));
  check_gradient([&](Tape& tp, Var v) { return sum(square(lincomb_gather_csr(v, ci, cw, co))); }, x0);
}

TEST_CASE("concat, slice, broadcast") {
  Eigen::ArrayXd x0 = arr({1, 2, 3, 4, 5});
  check_gradient(
      [](Tape& tp, Var x) {
        Var a = slice(x, 0, 2);
        Var b = slice(x, 2, 3);
        Var c = concat({square(a), muls(b, 3.0)});
        return sum(square(c));
      },
      x0);
  check_gradient([](Tape& tp, Var x) { return sum(mul(broadcast(mean(x), 5), x)); }, x0);
}

TEST_CASE("cosine value and gradient") {
  Tape t;
  Var a = t.input(arr({1, 0}));
  Var b = t.input(arr({1, 1}));
  CHECK(t.scalar(cosine(a, b)) == doctest::Approx(1.0 / std::sqrt(2.0)));

  Eigen::ArrayXd x0 = arr({0.3, -0.7, 1.2});
  Eigen::ArrayXd other = arr({1.0, 0.5, -0.25});
  check_gradient([&](Tape& tp, Var x) { return cosine(x, tp.constant(other)); }, x0);

  Tape t2;
  Var z = t2.input(arr({0, 0}));
  CHECK_THROWS_AS((void)cosine(z, z), InvalidArgument);
}

TEST_CASE("custom node splices external vjp") {
  Eigen::ArrayXd x0 = arr({1, 2, 3});
  // external op: y = 2x (value computed outside), vjp = 2g
  Tape t;
  Var x = t.input(x0);
  Var y = custom(t, {x}, Eigen::ArrayXd(2.0 * x0), [](const Eigen::ArrayXd& g) {
    return std::vector<Eigen::ArrayXd>{Eigen::ArrayXd(2.0 * g)};
  });
  Var loss = sum(square(y));
  t.backward(loss);
  Eigen::ArrayXd g = t.grad(x);
  for (int i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx(8.0 * x0[i]));
}

TEST_CASE("backward requires scalar and zeroes stale gradients") {
  Tape t;
  Var x = t.input(arr({1, 2}));
  CHECK_THROWS_AS(t.backward(x), InvalidArgument);
  Var l1 = sum(square(x));
  t.backward(l1);
  Eigen::ArrayXd g1 = t.grad(x);
  Var l2 = sum(x);
  t.backward(l2);
  Eigen::ArrayXd g2 = t.grad(x);
  CHECK(g1[0] == doctest::Approx(2.0));
  CHECK(g2[0] == doctest::Approx(1.0));  // not accumulated across backwards
}

TEST_CASE("constants carry no gradient") {
  Tape t;
  Var x = t.input(arr({1.0}));
  Var c = t.constant(arr({5.0}));
  Var loss = sum(mul(x, c));
  t.backward(loss);
  CHECK(t.grad(c).size() == 1);
  CHECK(t.grad(c)[0] == 0.0);
  CHECK(t.grad(x)[0] == doctest::Approx(5.0));
}
