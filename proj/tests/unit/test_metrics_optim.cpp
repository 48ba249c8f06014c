#include <doctest.h>

#include <cmath>
#include <random>

#include "dpn/error.hpp"
#include "dpn/metrics.hpp"
#include "dpn/optim.hpp"
#include "dpn/oracles.hpp"

using namespace dpn;

TEST_CASE("auc hand cases") {
  CHECK(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<double>{0, 0, 1, 1}) == 1.0);
  CHECK(auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<double>{0, 0, 1, 1}) == 0.0);
  CHECK(auc(std::vector<double>(6, 0.3), std::vector<double>{0, 1, 0, 1, 1, 0}) == 0.5);
  // one tied positive/negative pair: (1 + 0.5 + 1 + 1) / 4
  CHECK(auc(std::vector<double>{0.1, 0.5, 0.5, 0.9}, std::vector<double>{0, 0, 1, 1}) == 0.875);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<double>{1, 1}), MetricError);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1}, std::vector<double>{1, 0}), DimensionError);
}

TEST_CASE("auc equals the pairwise count and ignores monotone transforms") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  std::bernoulli_distribution coin(0.3);
  for (int it = 0; it < 50; ++it) {
    std::vector<double> s(80), y(80), t1(80), t2(80);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = it % 3 == 0 ? std::round(nd(rng) * 2) / 2 : nd(rng);
      y[i] = coin(rng);
      t1[i] = std::exp(s[i]);
      t2[i] = 3.0 * s[i] - 7.0;
    }
    y[0] = 1;
    y[1] = 0;
    const double a = auc(s, y);
    CHECK(a == auc_pairwise(s, y));
    CHECK(a == auc(t1, y));
    CHECK(a == auc(t2, y));
  }
}

TEST_CASE("logloss hand cases") {
  CHECK(logloss(std::vector<double>(4, 0.5), std::vector<double>{0, 1, 1, 0}) == doctest::Approx(std::log(2.0)));
  const double floor = logloss(std::vector<double>{0, 1, 1}, std::vector<double>{0, 1, 1});
  CHECK(floor > 0.0);
  CHECK(floor < 2e-7);
  // -(ln 0.8 + ln 0.6 + ln 0.9) / 3
  const double want = -(std::log(0.8) + std::log(0.6) + std::log(0.9)) / 3.0;
  CHECK(logloss(std::vector<double>{0.8, 0.4, 0.1}, std::vector<double>{1, 0, 0}) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("logloss never beats the clipped labels") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int it = 0; it < 100; ++it) {
    std::vector<double> p(20), y(20);
    for (std::size_t i = 0; i < 20; ++i) {
      p[i] = u(rng);
      y[i] = u(rng) < 0.5;
    }
    CHECK(logloss(p, y) >= logloss(y, y));
  }
}

TEST_CASE("slice metrics and report round trip") {
  const std::vector<double> p{0.9, 0.2, 0.7, 0.4, 0.6}, y{1, 0, 1, 0, 0};
  const SliceMetrics all = slice_metrics(p, y, std::vector<bool>(5, true));
  CHECK(all.auc == auc(p, y));
  CHECK(all.n == 5);
  const SliceMetrics none = slice_metrics(p, y, std::vector<bool>(5, false));
  CHECK(none.n == 0);
  CHECK_FALSE(none.auc_defined);
  const SliceMetrics one_class = slice_metrics(p, y, {true, false, true, false, false});
  CHECK_FALSE(one_class.auc_defined);

  EvalReport r;
  r.auc = 0.75;
  r.logloss = 0.5;
  r.n = 5;
  r.params = 101101;
  r.wall_time_s = 1.25;
  r.slices["user<20"] = all;
  const EvalReport back = EvalReport::from_json(r.to_json());
  CHECK(back.auc == r.auc);
  CHECK(back.params == r.params);
  CHECK(back.slices.at("user<20").n == 5);
  CHECK(r.to_text().find("user<20") != std::string::npos);
}

TEST_CASE("adam: zero gradient leaves parameters but advances the step") {
  Parameter p("w", Tensor({3}, {1, 2, 3}));
  Adam adam({&p}, {0.1});
  adam.zero_grad();
  adam.step();
  CHECK(p.value == Tensor({3}, {1, 2, 3}));
  CHECK(adam.steps() == 1);
}

TEST_CASE("adam: first step moves each coordinate by lr against the gradient sign") {
  Parameter p("w", Tensor({2}, {0.0, 0.0}));
  Adam adam({&p}, {0.05});
  p.grad = Tensor({2}, {3.0, -0.2});
  adam.step();
  // m_hat = g, v_hat = g^2 after bias correction
  CHECK(p.value[0] == doctest::Approx(-0.05).epsilon(1e-7));
  CHECK(p.value[1] == doctest::Approx(0.05).epsilon(1e-6));
}

TEST_CASE("adam: zero learning rate changes nothing") {
  Parameter p("w", Tensor({2}, {0.5, -0.5}));
  Adam adam({&p}, {0.0});
  p.grad = Tensor({2}, {1.0, 1.0});
  adam.step();
  CHECK(p.value == Tensor({2}, {0.5, -0.5}));
}

TEST_CASE("adam trace matches an independent recurrence") {
  const CheckResult r = check_adam_trace({}, 10);
  INFO(r.max_error);
  CHECK(r.passed);
  OracleOptions bad;
  bad.inject_fault = true;
  CHECK_FALSE(check_adam_trace(bad, 10).passed);
}

TEST_CASE("auc oracle over 200 sets is exact") {
  const CheckResult r = check_auc_bruteforce({}, 200, 50);
  CHECK(r.passed);
  CHECK(r.max_error == 0.0);
}
