#include <doctest.h>

#include <random>

#include "dpn/baselines.hpp"
#include "dpn/error.hpp"

using namespace dpn;

namespace {

Tensor randn(Shape s, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Tensor t(std::move(s));
  for (double& v : t.data()) v = nd(rng);
  return t;
}

Tensor eye(std::size_t d) {
  Tensor t({d, d});
  for (std::size_t i = 0; i < d; ++i) t[i * d + i] = 1.0;
  return t;
}

}  // namespace

TEST_CASE("mlp with identity weights and no activation is the identity") {
  std::mt19937_64 rng(1);
  Mlp mlp("mlp", 4, {{4, Activation::None, false}, {4, Activation::None, false}}, rng);
  for (std::size_t i = 0; i < 2; ++i) {
    mlp.layer(i).weight.value = eye(4);
    mlp.layer(i).bias.value.fill(0.0);
  }
  const Tensor x = randn({3, 4}, rng);
  Graph g;
  CHECK(mlp.forward(g, g.constant(x), false).value() == x);
}

TEST_CASE("mlp with zero weights outputs the final bias") {
  std::mt19937_64 rng(2);
  Mlp mlp("mlp", 4, {{5, Activation::Relu, false}, {2, Activation::None, false}}, rng);
  for (std::size_t i = 0; i < 2; ++i) mlp.layer(i).weight.value.fill(0.0);
  mlp.layer(1).bias.value = Tensor({2}, {0.25, -1.5});
  Graph g;
  const Tensor y = mlp.forward(g, g.constant(randn({3, 4}, rng)), false).value();
  for (std::size_t b = 0; b < 3; ++b) {
    CHECK(y[b * 2] == 0.25);
    CHECK(y[b * 2 + 1] == -1.5);
  }
  CHECK_THROWS_AS(mlp.forward(g, g.constant(Tensor({3, 5})), false), DimensionError);
}

TEST_CASE("mlp parameter count includes batch norm scale and shift") {
  std::mt19937_64 rng(3);
  Mlp mlp("mlp", 30, {{300, Activation::Relu, true}, {300, Activation::Relu, true}}, rng);
  CHECK(mlp.param_count() == (30 * 300 + 300 + 600) + (300 * 300 + 300 + 600));
}

TEST_CASE("batchnorm eval mode with unit running stats is the identity") {
  BatchNorm bn("bn", 3);
  std::mt19937_64 rng(4);
  const Tensor x = randn({4, 3}, rng);
  Graph g;
  const Tensor y = bn.forward(g, g.constant(x), false).value();
  CHECK(max_abs_diff(x, y) < 1e-5 * 4);
}

TEST_CASE("cross layer hand cases") {
  const std::vector<double> x0{1, 2, 3}, xi{-1, 0.5, 2}, b{0.1, 0.2, 0.3};
  auto y = cross_layer_ref(x0, xi, {0, 0, 0}, b);
  for (std::size_t k = 0; k < 3; ++k) CHECK(y[k] == b[k] + xi[k]);
  const std::size_t d = 5;
  std::vector<double> ones(d, 1.0), zero(d, 0.0);
  y = cross_layer_ref(ones, ones, ones, zero);
  for (double v : y) CHECK(v == d + 1.0);

  Graph g;
  Var x = g.constant(Tensor({1, 3}, {-1, 0.5, 2}));
  Var out = cross_layer(g.constant(Tensor({1, 3}, {1, 2, 3})), x, g.constant(Tensor({3})), g.constant(Tensor({3})));
  CHECK(out.value() == x.value());
  CHECK_THROWS_AS(cross_layer_ref(x0, {1, 2}, b, b), DimensionError);
}

TEST_CASE("fm pairwise hand cases") {
  CHECK(fm_pairwise(eye(3)) == 0.0);
  CHECK(fm_pairwise(Tensor({3, 2}, std::vector<double>(6, 1.0))) == 6.0);
  CHECK_THROWS_AS(fm_pairwise(Tensor({1, 4})), DimensionError);
  const auto norm = fm_pairwise_normalized(Tensor({3, 2}, {1, 0, 0, 1, 1, 1}));
  CHECK(norm == std::vector<double>{0.5, 0.5, 1.0});
}

TEST_CASE("fm pairwise matches the square-of-sum identity") {
  std::mt19937_64 rng(5);
  for (int it = 0; it < 50; ++it) {
    const std::size_t t = 2 + it % 6, e = 1 + it % 5;
    const Tensor X = randn({t, e}, rng);
    double id = 0.0;
    for (std::size_t k = 0; k < e; ++k) {
      double s = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < t; ++i) {
        s += X[i * e + k];
        sq += X[i * e + k] * X[i * e + k];
      }
      id += 0.5 * (s * s - sq);
    }
    CHECK(std::abs(id - fm_pairwise(X)) < 1e-10);
  }
}

TEST_CASE("field dnn identity and averaging cases") {
  std::mt19937_64 rng(6);
  const std::size_t t = 3, e = 4;
  const Tensor X = randn({2, t, e}, rng);
  Graph g;
  CHECK(field_dnn(g.constant(X), g.constant(eye(t)), g.constant(eye(e))).value() == X);
  const Tensor avg({t, t}, std::vector<double>(t * t, 1.0 / t));
  const Tensor Wl = randn({e, 2}, rng);
  const Tensor y = field_dnn(g.constant(X), g.constant(avg), g.constant(Wl)).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t o = 0; o < 2; ++o) {
      double ref = 0.0;
      for (std::size_t k = 0; k < e; ++k) {
        double m = 0.0;
        for (std::size_t i = 0; i < t; ++i) m += X[(b * t + i) * e + k] / t;
        ref += m * Wl[k * 2 + o];
      }
      for (std::size_t i = 0; i < t; ++i) CHECK(std::abs(y[(b * t + i) * 2 + o] - ref) < 1e-12);
    }
  CHECK_THROWS_AS(field_dnn(g.constant(X), g.constant(eye(2)), g.constant(eye(e))), DimensionError);
}

TEST_CASE("mhsa with one key attends fully to it") {
  std::mt19937_64 rng(7);
  Mhsa att("att", {4, 2}, rng);
  const Tensor K = randn({1, 1, 4}, rng), Q = randn({1, 3, 4}, rng);
  Graph g;
  Var A;
  const Tensor y = att.forward(g, g.constant(K), g.constant(K), g.constant(Q), &A).value();
  const Tensor ref = matmul(matmul(g.constant(K), g.param(att.Wv)), g.param(att.Wo)).value();
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(y[s * 4 + k] - ref[k]) < 1e-12);
  for (double a : A.value().data()) CHECK(a == 1.0);
}

TEST_CASE("mhsa with identical keys mean-pools the projected values") {
  std::mt19937_64 rng(8);
  Mhsa att("att", {6, 3}, rng);
  const Tensor row = randn({6}, rng);
  Tensor K({1, 4, 6});
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t k = 0; k < 6; ++k) K[j * 6 + k] = row[k];
  const Tensor V = randn({1, 4, 6}, rng), Q = randn({1, 2, 6}, rng);
  Graph g;
  const Tensor y = att.forward(g, g.constant(K), g.constant(V), g.constant(Q)).value();
  const Tensor ref = matmul(matmul(mean(g.constant(V), 1), g.param(att.Wv)), g.param(att.Wo)).value();
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t k = 0; k < 6; ++k) CHECK(std::abs(y[s * 6 + k] - ref[k]) < 1e-12);
}

TEST_CASE("mhsa attention rows sum to one and self-attention is permutation equivariant") {
  std::mt19937_64 rng(9);
  Mhsa att("att", {4, 2}, rng);
  const Tensor X = randn({2, 5, 4}, rng);
  Tensor Xp(X.shape());
  const std::size_t perm[5] = {2, 4, 0, 1, 3};
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t k = 0; k < 4; ++k) Xp[(b * 5 + j) * 4 + k] = X[(b * 5 + perm[j]) * 4 + k];
  Graph g;
  Var x = g.constant(X), xp = g.constant(Xp);
  Var att_w;
  const Tensor y = att.forward(g, x, x, x, &att_w).value();
  const Tensor A = att_w.value();
  REQUIRE(A.shape() == Shape{2, 2, 5, 5});
  for (std::size_t r = 0; r < 2 * 2 * 5; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += A[r * 5 + j];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  const Tensor yp = att.forward(g, xp, xp, xp).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(yp[(b * 5 + j) * 4 + k] - y[(b * 5 + perm[j]) * 4 + k]) < 1e-12);
  CHECK_THROWS_AS(Mhsa("bad", {5, 2}, rng), ConfigError);
}
