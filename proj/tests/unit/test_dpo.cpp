#include <doctest.h>

#include <cmath>
#include <random>

#include "dpn/baselines.hpp"
#include "dpn/dpo.hpp"
#include "dpn/error.hpp"
#include "dpn/oracles.hpp"

using namespace dpn;

namespace {

Tensor randn(Shape s, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Tensor t(std::move(s));
  for (double& v : t.data()) v = nd(rng);
  return t;
}

void randomize(Module& m, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 0.5);
  for (Parameter* p : m.parameters())
    for (double& v : p->value.data()) v = nd(rng);
}

GeneratorSpec spec_of(GeneratorKind k, std::size_t rank = 3, Gate gate = Gate::Softmax) {
  GeneratorSpec s;
  s.kind = k;
  s.rank = rank;
  s.gate = gate;
  return s;
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("scalar affine generator: W(z) = z * W_hat") {
  std::mt19937_64 rng(1);
  Generator gen("g", spec_of(GeneratorKind::AffineFull), 1, 1, 1, true, rng);
  gen.param("W_hat").value[0] = 1.0;
  gen.param("b_hat").value[0] = 0.0;
  Graph g;
  DynamicWeights w = gen.generate(g, g.constant(Tensor({1, 1}, {2.0})));
  CHECK(w.weight.shape() == Shape{1, 1, 1});
  CHECK(w.weight.value()[0] == 2.0);
}

TEST_CASE("mixture of kernels with equal gate logits averages the experts") {
  std::mt19937_64 rng(2);
  Generator gen("g", spec_of(GeneratorKind::LowRankMoK, 2), 3, 2, 2, false, rng);
  gen.param("W1").value.fill(0.0);
  gen.param("b1").value.fill(0.7);
  const Tensor E = gen.param("experts").value;
  Graph g;
  const Tensor W = gen.generate(g, g.constant(randn({1, 3}, rng))).weight.value();
  for (std::size_t i = 0; i < 4; ++i) CHECK(W[i] == doctest::Approx((E[i] + E[4 + i]) / 2).epsilon(1e-14));
}

TEST_CASE("matrix decomposition equals explicit P phi(z) Q") {
  std::mt19937_64 rng(3);
  GeneratorSpec s = spec_of(GeneratorKind::MatrixDecompResidual, 2, Gate::Sigmoid);
  s.core_rank = 2;
  const std::size_t n = 3, m = 4, c = 5, r = 2, l = 2;
  Generator gen("g", s, n, m, c, false, rng);
  std::mt19937_64 prng(4);
  randomize(gen, prng);
  const Tensor z = randn({1, n}, rng);
  Graph g;
  const Tensor W = gen.generate(g, g.constant(z)).weight.value();
  const Tensor &W1 = gen.param("W1").value, &b1 = gen.param("b1").value, &W2 = gen.param("W2").value,
               &b2 = gen.param("b2").value, &P = gen.param("P").value, &Q = gen.param("Q").value,
               &W0 = gen.param("W0").value;
  std::vector<double> hidden(l), phi(r * r);
  for (std::size_t k = 0; k < l; ++k) {
    double a = b1[k];
    for (std::size_t j = 0; j < n; ++j) a += z[j] * W1[j * l + k];
    hidden[k] = sigm(a);
  }
  for (std::size_t q = 0; q < r * r; ++q) {
    phi[q] = b2[q];
    for (std::size_t k = 0; k < l; ++k) phi[q] += hidden[k] * W2[k * r * r + q];
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t o = 0; o < c; ++o) {
      double ref = W0[i * c + o];
      for (std::size_t a = 0; a < r; ++a)
        for (std::size_t b = 0; b < r; ++b) ref += P[i * r + a] * phi[a * r + b] * Q[b * c + o];
      CHECK(std::abs(ref - W[i * c + o]) < 1e-12);
    }
}

TEST_CASE("se generator rescales a static kernel") {
  std::mt19937_64 rng(5);
  GeneratorSpec s = spec_of(GeneratorKind::SELayer);
  s.se_down_ratio = 0.5;
  Generator gen("g", s, 4, 3, 2, true, rng);
  randomize(gen, rng);
  Graph g;
  const Tensor W = gen.generate(g, g.constant(randn({1, 4}, rng))).weight.value();
  const Tensor& W0 = gen.param("W0").value;
  for (std::size_t i = 0; i < 6; ++i) {
    const double ratio = W[i] / W0[i];
    CHECK(ratio > 0.0);
    CHECK(ratio < 1.0);
  }
}

TEST_CASE("zero context and zero biases give zero output") {
  std::mt19937_64 rng(6);
  FeatureDpo layer("f", {4, 3, 2, spec_of(GeneratorKind::AffineFull), true}, rng);
  Graph g;
  const Tensor y = layer.forward(g, g.constant(randn({2, 4}, rng)), g.constant(Tensor({2, 3}))).value();
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("generator configuration errors name the extents") {
  std::mt19937_64 rng(7);
  CHECK_THROWS_AS(Generator("g", spec_of(GeneratorKind::LowRankMoK, 0), 3, 2, 2, true, rng), ConfigError);
  GeneratorSpec s = spec_of(GeneratorKind::LowRankMoK);
  s.heads_in = 3;
  s.heads_out = 3;
  try {
    Generator("g", s, 4, 4, 6, true, rng);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find('4') != std::string::npos);
  }
  s.heads_in = 2;
  s.heads_out = 3;
  CHECK_THROWS_AS(Generator("g", s, 4, 4, 6, true, rng), ConfigError);
  GeneratorSpec d = spec_of(GeneratorKind::MatrixDecomp);
  d.heads_in = d.heads_out = 2;
  CHECK_THROWS_AS(Generator("g", d, 4, 4, 4, true, rng), ConfigError);
}

TEST_CASE("feature dpo rejects mismatched inputs") {
  std::mt19937_64 rng(8);
  FeatureDpo layer("fc1", {4, 3, 2, spec_of(GeneratorKind::LowRankMoK), true}, rng);
  Graph g;
  CHECK_THROWS_AS(layer.forward(g, g.constant(Tensor({2, 5})), g.constant(Tensor({2, 3}))), DimensionError);
  CHECK_THROWS_AS(layer.forward(g, g.constant(Tensor({2, 4})), g.constant(Tensor({3, 3}))), DimensionError);
}

TEST_CASE("pairwise example: three two-dim fields") {
  std::mt19937_64 rng(9);
  FieldDpoConfig cfg;
  cfg.t1 = cfg.t2 = 3;
  cfg.n = 2;
  cfg.c = 1;
  cfg.exclude_self = true;
  cfg.bias = false;
  cfg.generator.kind = GeneratorKind::AffineFull;
  FieldDpo layer("fm", cfg, rng);
  Tensor& W_hat = layer.generator().param("W_hat").value;
  W_hat = Tensor({2, 2}, {1, 0, 0, 1});
  layer.generator().param("b_hat").value.fill(0.0);
  Graph g;
  Var X = g.constant(Tensor({1, 3, 2}, {1, 0, 0, 1, 1, 1}));
  const Tensor y = layer.forward(g, X, X).value();
  // y_i = (1/2) sum_{j != i} x_i . x_j
  CHECK(y[0] == 0.5);
  CHECK(y[1] == 0.5);
  CHECK(y[2] == 1.0);
  CHECK(y[0] + y[1] + y[2] == 2.0);
}

TEST_CASE("single context field: summation, attention and concat coincide") {
  const Tensor X = [] {
    std::mt19937_64 r(10);
    return randn({2, 3, 4}, r);
  }();
  const Tensor Z = [] {
    std::mt19937_64 r(11);
    return randn({2, 1, 4}, r);
  }();
  std::vector<Tensor> outs;
  for (auto agg : {Aggregation::Summation, Aggregation::Attention, Aggregation::Concat}) {
    std::mt19937_64 rng(12);
    FieldDpoConfig cfg;
    cfg.t1 = 3;
    cfg.t2 = 1;
    cfg.n = 4;
    cfg.c = 2;
    cfg.aggregation = agg;
    FieldDpo layer("fd", cfg, rng);
    Graph g;
    outs.push_back(layer.forward(g, g.constant(X), g.constant(Z)).value());
  }
  CHECK(max_abs_diff(outs[0], outs[1]) < 1e-14);
  CHECK(max_abs_diff(outs[0], outs[2]) < 1e-14);
}

TEST_CASE("attention with uniform scores equals summation; summation ignores context order") {
  std::mt19937_64 data(13);
  const Tensor X = randn({2, 3, 4}, data), Z = randn({2, 5, 4}, data);
  Tensor Zp(Z.shape());
  const std::size_t perm[5] = {3, 0, 4, 2, 1};
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t k = 0; k < 4; ++k) Zp[(b * 5 + j) * 4 + k] = Z[(b * 5 + perm[j]) * 4 + k];
  FieldDpoConfig cfg;
  cfg.t1 = 3;
  cfg.t2 = 5;
  cfg.n = 4;
  cfg.c = 2;
  std::mt19937_64 r1(14), r2(14);
  FieldDpo sum_layer("fd", cfg, r1);
  cfg.aggregation = Aggregation::Attention;
  FieldDpo att_layer("fd", cfg, r2);
  att_layer.attention_weight().value.fill(0.0);
  att_layer.attention_bias().value.fill(0.0);
  Graph g;
  const Tensor ys = sum_layer.forward(g, g.constant(X), g.constant(Z)).value();
  const Tensor ya = att_layer.forward(g, g.constant(X), g.constant(Z)).value();
  const Tensor yp = sum_layer.forward(g, g.constant(X), g.constant(Zp)).value();
  CHECK(max_abs_diff(ys, ya) < 1e-12);
  CHECK(max_abs_diff(ys, yp) < 1e-12);
}

TEST_CASE("self aggregation needs matching field counts; exclude_self needs summation") {
  std::mt19937_64 rng(15);
  FieldDpoConfig cfg;
  cfg.t1 = 3;
  cfg.t2 = 4;
  cfg.n = 2;
  cfg.c = 2;
  cfg.aggregation = Aggregation::Self;
  CHECK_THROWS_AS(FieldDpo("fd", cfg, rng), ConfigError);
  cfg.t2 = 3;
  cfg.aggregation = Aggregation::Concat;
  cfg.exclude_self = true;
  CHECK_THROWS_AS(FieldDpo("fd", cfg, rng), ConfigError);
  CHECK(parse_aggregation("attention") == Aggregation::Attention);
  CHECK_THROWS_AS(parse_aggregation("max"), ConfigError);
}

TEST_CASE("implicit branch adds the static two-sided map") {
  std::mt19937_64 r1(16), r2(16), data(17);
  FieldDpoConfig cfg;
  cfg.t1 = cfg.t2 = 3;
  cfg.n = 4;
  cfg.c = 2;
  cfg.aggregation = Aggregation::Concat;
  FieldDpo plain("fd", cfg, r1);
  cfg.implicit_branch = true;
  FieldDpo both("fd", cfg, r2);
  const Tensor X = randn({2, 3, 4}, data);
  Graph g;
  Var x = g.constant(X);
  const Tensor diff = sub(both.forward(g, x, x), plain.forward(g, x, x)).value();
  const Tensor ref = field_dnn(x, g.constant(both.field_mix().value), g.constant(both.field_proj().value)).value();
  CHECK(max_abs_diff(diff, ref) < 1e-12);
}

TEST_CASE("homo dpo with a single step only uses the center tap") {
  std::mt19937_64 rng(18);
  HomoDpoConfig cfg;
  cfg.k = 3;
  cfg.n = 4;
  cfg.generator = spec_of(GeneratorKind::LowRankMoK);
  HomoDpo layer("h", cfg, rng);
  const Tensor X = randn({2, 1, 4}, rng);
  Graph g;
  const Tensor y = layer.forward(g, g.constant(X)).value();
  const Tensor W = layer.generator(1).generate(g, g.constant(X.reshaped({2, 4}))).weight.value();  // [2, 1, 4]
  for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(y[i] - W[i] * X[i]) < 1e-14);
}

TEST_CASE("homo dpo on a constant sequence is constant away from the edges") {
  for (std::size_t k : {1, 3, 5}) {
    for (std::size_t c : {1, 3}) {
      std::mt19937_64 rng(19 + k);
      HomoDpoConfig cfg;
      cfg.k = k;
      cfg.n = 3;
      cfg.c = c;
      cfg.bias = true;
      cfg.generator = spec_of(GeneratorKind::LowRankMoK);
      HomoDpo layer("h", cfg, rng);
      const std::size_t t = 9;
      const Tensor v = randn({3}, rng);
      Tensor X({1, t, 3});
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t ch = 0; ch < 3; ++ch) X[i * 3 + ch] = v[ch];
      Graph g;
      const Tensor y = layer.forward(g, g.constant(X)).value();
      const std::size_t out = layer.out_dim(), half = k / 2;
      for (std::size_t i = half; i + half < t; ++i)
        for (std::size_t o = 0; o < out; ++o) CHECK(std::abs(y[i * out + o] - y[half * out + o]) < 1e-12);
    }
  }
}

TEST_CASE("homo kernel generation is invariant to time order without a local encoder") {
  std::mt19937_64 rng(20);
  HomoDpoConfig cfg;
  cfg.k = 3;
  cfg.n = 3;
  cfg.c = 2;
  cfg.generator = spec_of(GeneratorKind::LowRankMoK);
  HomoDpo layer("h", cfg, rng);
  const Tensor X = randn({1, 5, 3}, rng);
  Tensor Xr(X.shape());
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t ch = 0; ch < 3; ++ch) Xr[i * 3 + ch] = X[(4 - i) * 3 + ch];
  Graph g;
  const Tensor a = layer.kernels(g, g.constant(X)).weight.value();
  const Tensor b = layer.kernels(g, g.constant(Xr)).weight.value();
  CHECK(a.shape() == Shape{1, 3, 3, 2});
  CHECK(max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("homo dpo rejects even kernels and empty sequences") {
  std::mt19937_64 rng(21);
  HomoDpoConfig cfg;
  cfg.k = 4;
  cfg.n = 3;
  CHECK_THROWS_AS(HomoDpo("h", cfg, rng), ConfigError);
  cfg.k = 3;
  HomoDpo layer("h", cfg, rng);
  Graph g;
  CHECK_THROWS_AS(layer.forward(g, g.constant(Tensor({1, 0, 3}))), ConfigError);
}

TEST_CASE("hetero dpo with one behavior equals feature dpo on that behavior") {
  std::mt19937_64 r1(22), r2(22), data(23);
  const GeneratorSpec s = spec_of(GeneratorKind::LowRankMoK);
  HeteroDpo het("q", {3, 4, 2, s, true}, r1);
  FeatureDpo feat("q", {3, 4, 2, s, true}, r2);
  const Tensor q = randn({2, 3}, data), z = randn({2, 4}, data);
  Graph g;
  const Tensor a = het.forward(g, g.constant(q), g.constant(z.reshaped({2, 1, 4}))).value();
  const Tensor b = feat.forward(g, g.constant(q), g.constant(z)).value();
  CHECK(a == b);
}

TEST_CASE("hetero dpo: zero query with zero bias heads gives zero") {
  std::mt19937_64 rng(24);
  HeteroDpo het("q", {3, 4, 2, spec_of(GeneratorKind::LowRankMoK), true}, rng);
  het.generator().param("expert_bias").value.fill(0.0);
  Graph g;
  const Tensor y = het.forward(g, g.constant(Tensor({2, 3})), g.constant(randn({2, 5, 4}, rng))).value();
  for (double v : y.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(het.forward(g, g.constant(Tensor({2, 3})), g.constant(Tensor({2, 0, 4}))), ConfigError);
}

TEST_CASE("one-by-one heads reproduce the single-head layer bitwise") {
  for (auto kind : {GeneratorKind::AffineFull, GeneratorKind::LowRankMoK, GeneratorKind::HyperDense}) {
    GeneratorSpec a = spec_of(kind);
    GeneratorSpec b = a;
    b.heads_in = 1;
    b.heads_out = 1;
    std::mt19937_64 r1(25), r2(25), data(26);
    FeatureDpo la("f", {4, 3, 4, a, true}, r1), lb("f", {4, 3, 4, b, true}, r2);
    const Tensor x = randn({3, 4}, data), z = randn({3, 3}, data);
    Graph g;
    CHECK(la.forward(g, g.constant(x), g.constant(z)).value() == lb.forward(g, g.constant(x), g.constant(z)).value());
  }
}

TEST_CASE("two-by-two heads give block-diagonal weights") {
  std::mt19937_64 rng(27);
  GeneratorSpec s = spec_of(GeneratorKind::LowRankMoK);
  s.heads_in = s.heads_out = 2;
  Generator gen("g", s, 3, 4, 6, false, rng);
  CHECK(gen.blocks() == 2);
  Graph g;
  const Tensor W = gen.generate(g, g.constant(randn({2, 3}, rng))).weight.value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t o = 0; o < 6; ++o) {
        const double w = W[(b * 4 + i) * 6 + o];
        if (i / 2 != o / 3) {
          CHECK(w == 0.0);
        } else {
          CHECK(w != 0.0);
        }
      }
}

TEST_CASE("identity suite passes and catches an injected fault") {
  OracleOptions opt;
  for (const auto& r : run_suite("identities", opt)) {
    INFO(r.name << " err=" << r.max_error);
    CHECK(r.passed);
  }
  opt.inject_fault = true;
  std::size_t failed = 0;
  for (const auto& r : run_suite("identities", opt)) failed += !r.passed;
  CHECK(failed >= 5);
}

TEST_CASE("every layer type passes the gradient check over 20 seeds") {
  for (const auto& gc : gradcheck_cases()) {
    const CheckResult r = run_gradcase(gc, 20, 1e-4);
    INFO(r.name << " err=" << r.max_error << " " << r.detail);
    CHECK(r.passed);
  }
}
