#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "facegen/embedding.hpp"
#include "facegen/rng.hpp"
#include "facegen/tensor.hpp"

using namespace facegen;

TEST_CASE("matmul shape algebra and errors") {
  Tape t;
  Tensor a = t.leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = t.leaf({3, 2}, {1, 0, 0, 1, 1, 1});
  Tensor c = t.matmul(a, b);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(c.values() == std::vector<double>{4, 5, 10, 11});

  Tensor bad = t.leaf({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_WITH_AS(t.matmul(a, bad), doctest::Contains("matmul"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(t.matmul(a, bad), doctest::Contains("(2x3)"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(t.add(a, bad), doctest::Contains("shape mismatch"), std::invalid_argument);
}

TEST_CASE("cosine identity and zero-vector error") {
  Tape t;
  Tensor v = t.leaf({3}, {0.3, -1.2, 2.0});
  CHECK(t.cosine(v, v).scalar() == doctest::Approx(1.0).epsilon(1e-15));
  Tensor z = t.zeros({3});
  CHECK_THROWS_AS(t.cosine(v, z), std::invalid_argument);
}

TEST_CASE("reduce_mean of zeros is zero") {
  Tape t;
  CHECK(t.reduce_mean(t.zeros({4, 4})).scalar() == 0.0);
}

TEST_CASE("backward of sum gives all-ones") {
  Tape t;
  Tensor x = t.leaf({2, 3}, {1, -2, 3, 0.5, 0, 7}, true);
  auto grads = t.backward(t.reduce_sum(x));
  CHECK(grads.at(x.id()) == std::vector<double>(6, 1.0));
}

TEST_CASE("analytic gradient of squared norm") {
  Tape t;
  Tensor x = t.leaf({2}, {1.0, 2.0}, true);
  Tensor loss = t.reduce_sum(t.mul(x, x));
  auto grads = t.backward(loss);
  CHECK(grads.at(x.id()) == std::vector<double>{2.0, 4.0});
}

TEST_CASE("backward requires a scalar loss") {
  Tape t;
  Tensor x = t.leaf({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(t.backward(t.mul(x, x)), std::invalid_argument);
}

TEST_CASE("leaves without grad requirement stay untouched") {
  Tape t;
  Tensor x = t.leaf({2}, {1.0, 2.0}, true);
  Tensor c = t.leaf({2}, {3.0, 4.0}, false);
  auto grads = t.backward(t.reduce_sum(t.mul(x, c)));
  CHECK(grads.count(x.id()) == 1);
  CHECK(grads.count(c.id()) == 0);
}

TEST_CASE("grad_check: linear functions are exact") {
  Vec c{0.5, -1.5, 2.5};
  const double err = grad_check(
      [&](Tape& t, const Tensor& x) { return t.reduce_sum(t.mul(x, t.constant({3}, c))); },
      {1.0, 2.0, 3.0});
  CHECK(err < 1e-8);
}

TEST_CASE("grad_check: cosine against a fixed vector") {
  Rng rng(11);
  Vec c = rng.normal_vec(8);
  Vec x = rng.normal_vec(8);
  const double err = grad_check(
      [&](Tape& t, const Tensor& v) { return t.cosine(v, t.constant({8}, c)); }, x);
  CHECK(err < 1e-5);
}

TEST_CASE("grad_check: zero-gradient plateau reports zero error, not NaN") {
  const double err = grad_check(
      [&](Tape& t, const Tensor& x) { return t.reduce_sum(t.scale(x, 0.0)); }, {1.0, -2.0});
  CHECK(err == 0.0);
}

TEST_CASE("grad_check: every op in a small MLP-style graph") {
  // Five-parameter toy network exercising matmul/add/mul/softplus/cosine and
  // the reductions; checked against central differences with h = 1e-6.
  Rng rng(42);
  Vec params = rng.normal_vec(5);
  const double err = grad_check(
      [&](Tape& t, const Tensor& p) {
        Tensor w = t.reshape(p, {5, 1});
        Tensor x = t.constant({3, 5}, Rng(7).normal_vec(15));
        Tensor h = t.softplus(t.matmul(x, w));        // (3,1)
        Tensor target = t.constant({3, 1}, {1.0, -1.0, 0.5});
        Tensor d = t.sub(h, target);
        Tensor sq = t.reduce_sum(t.mul(d, d));
        Tensor cos = t.cosine(h, target);
        return t.add(sq, cos);
      },
      params);
  CHECK(err < 1e-5);
}

TEST_CASE("grad_check: remaining op coverage") {
  Rng rng(3);

  SUBCASE("div, abs, scale") {
    Vec x = rng.normal_vec(4);
    for (auto& v : x) v += v >= 0 ? 1.0 : -1.0;  // keep away from zero
    const double err = grad_check(
        [](Tape& t, const Tensor& v) {
          Tensor num = t.abs(t.scale(v, 2.5));
          Tensor den = t.constant({4}, {2.0, 3.0, 4.0, 5.0});
          return t.reduce_mean(t.div(num, den));
        },
        x);
    CHECK(err < 1e-5);
  }

  SUBCASE("l2_norm and reshape") {
    Vec x = rng.normal_vec(6);
    const double err = grad_check(
        [](Tape& t, const Tensor& v) { return t.l2_norm(t.reshape(v, {2, 3})); }, x);
    CHECK(err < 1e-5);
  }

  SUBCASE("concat_rows") {
    Vec x = rng.normal_vec(6);
    const double err = grad_check(
        [](Tape& t, const Tensor& v) {
          Tensor top = t.reshape(v, {2, 3});
          Tensor bottom = t.constant({1, 3}, {1.0, 2.0, 3.0});
          Tensor cat = t.concat_rows({top, bottom, top});
          return t.reduce_sum(t.mul(cat, cat));
        },
        x);
    CHECK(err < 1e-5);
  }

  SUBCASE("upsample_nn") {
    Vec x = rng.normal_vec(8);
    const double err = grad_check(
        [](Tape& t, const Tensor& v) {
          Tensor grid = t.reshape(v, {2, 2, 2});
          Tensor up = t.upsample_nn(grid, 2);
          Tensor w = t.constant({4, 4, 2}, Rng(9).normal_vec(32));
          return t.reduce_sum(t.mul(up, w));
        },
        x);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("upsample_nn replicates pixels") {
  Tape t;
  Tensor a = t.leaf({1, 2, 1}, {1.0, 2.0});
  Tensor up = t.upsample_nn(a, 2);
  CHECK(up.shape() == Shape{2, 4, 1});
  CHECK(up.values() == std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2});
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(5);
  for (int round = 0; round < 20; ++round) {
    Vec xv = rng.normal_vec(6);
    auto build = [&](Tape& t, Tensor& x) {
      x = t.leaf({6}, xv, true);
      Tensor m = t.reshape(x, {2, 3});
      Tensor w = t.constant({3, 2}, {1, 2, 0.5, -1, 3, 0.25});
      Tensor y = t.softplus(t.matmul(m, w));
      Tensor l1 = t.reduce_sum(t.mul(y, y));
      Tensor l2 = t.l2_norm(m);
      return std::make_pair(l1, l2);
    };
    Tape ta;
    Tensor xa;
    auto [a1, a2] = build(ta, xa);
    auto g_sum = ta.backward(ta.add(a1, a2)).at(xa.id());

    Tape tb;
    Tensor xb;
    auto [b1, b2] = build(tb, xb);
    auto g1 = tb.backward(b1).at(xb.id());
    auto g2 = tb.backward(b2).at(xb.id());
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(g_sum[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("replaying a forward pass is bit-identical") {
  Rng rng(13);
  Vec xv = rng.normal_vec(12);
  auto run = [&]() {
    Tape t;
    Tensor x = t.leaf({3, 4}, xv);
    Tensor w = t.constant({4, 3}, Rng(21).normal_vec(12));
    Tensor y = t.softplus(t.matmul(x, w));
    return t.reduce_sum(t.mul(y, y)).scalar();
  };
  const double first = run();
  const double second = run();
  CHECK(std::memcmp(&first, &second, sizeof(double)) == 0);
}

TEST_CASE("non-finite values are refused") {
  Tape t;
  Tensor big = t.leaf({1}, {1e308});
  CHECK_THROWS_AS(t.mul(big, big), std::runtime_error);
}
