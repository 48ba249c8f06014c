#include "dpn/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dpn/baselines.hpp"
#include "dpn/dpo.hpp"
#include "dpn/error.hpp"
#include "dpn/gradcheck.hpp"
#include "dpn/metrics.hpp"
#include "dpn/model.hpp"
#include "dpn/optim.hpp"

namespace dpn {

namespace {

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor randn(Shape s, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Tensor t(std::move(s));
  for (double& v : t.data()) v = nd(rng);
  return t;
}

void randomize(Parameter& p, Rng& rng, double sd = 0.5) {
  std::normal_distribution<double> nd(0.0, sd);
  for (double& v : p.value.data()) v = nd(rng);
}

CheckResult finish(std::string name, double err, double thr, std::size_t n, std::string detail = {}) {
  return CheckResult{std::move(name), err, thr, err < thr, n, std::move(detail)};
}

Tensor eval_forward(const std::function<Var(Graph&)>& f) {
  Graph g;
  return f(g).value();
}

}  // namespace

CheckResult check_affine_expansion(const OracleOptions& opt, std::size_t instances) {
  Rng rng(opt.seed ^ 0xa1);
  double worst = 0.0;
  for (std::size_t it = 0; it < instances; ++it) {
    const std::size_t m = pick(rng, 1, 8), n = pick(rng, 1, 8), c = pick(rng, 1, 8), B = 3;
    GeneratorSpec spec;
    spec.kind = GeneratorKind::AffineFull;
    FeatureDpo layer("dpo", {m, n, c, spec, true}, rng);
    Generator& gen = layer.generator();
    for (const char* role : {"W_hat", "b_hat", "W_dot", "b_dot"}) randomize(gen.param(role), rng);
    const Tensor W_hat = gen.param("W_hat").value, b_hat = gen.param("b_hat").value;
    const Tensor W_dot = gen.param("W_dot").value, b_dot = gen.param("b_dot").value;
    if (opt.inject_fault) gen.param("W_hat").value[0] += 1e-6;
    const Tensor x = randn({B, m}, rng), z = randn({B, n}, rng);
    const Tensor y = eval_forward([&](Graph& g) { return layer.forward(g, g.constant(x), g.constant(z)); });
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t o = 0; o < c; ++o) {
        double bilinear = 0.0, ctx = 0.0, inp = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t i = 0; i < m; ++i) bilinear += z[b * n + j] * W_hat[j * m * c + i * c + o] * x[b * m + i];
        for (std::size_t j = 0; j < n; ++j) ctx += W_dot[j * c + o] * z[b * n + j];
        for (std::size_t i = 0; i < m; ++i) inp += b_hat[i * c + o] * x[b * m + i];
        const double ref = bilinear + ctx + inp + b_dot[o];
        worst = std::max(worst, std::abs(ref - y[b * c + o]));
      }
    }
  }
  return finish("feature_dpo affine fused == four-term expansion", worst, 1e-10, instances);
}

CheckResult check_cross_degeneration(const OracleOptions& opt, std::size_t instances) {
  Rng rng(opt.seed ^ 0xc2);
  double worst = 0.0;
  for (std::size_t it = 0; it < instances; ++it) {
    const std::size_t d = pick(rng, 1, 8), B = 3;
    GeneratorSpec spec;
    spec.kind = GeneratorKind::AffineFull;
    FeatureDpo layer("dpo", {d, d, d, spec, true}, rng);
    Generator& gen = layer.generator();
    const Tensor w = randn({d}, rng), bias = randn({d}, rng);
    // W_hat[j, i, o] = w_i [j == o], b_hat = I, W_dot = 0, b_dot = b
    Tensor& W_hat = gen.param("W_hat").value;
    Tensor& b_hat = gen.param("b_hat").value;
    W_hat.fill(0.0);
    b_hat.fill(0.0);
    for (std::size_t i = 0; i < d; ++i) {
      b_hat[i * d + i] = 1.0;
      for (std::size_t j = 0; j < d; ++j) W_hat[j * d * d + i * d + j] = w[i];
    }
    gen.param("W_dot").value.fill(0.0);
    gen.param("b_dot").value = bias;
    if (opt.inject_fault) W_hat[0] += 1e-6;
    const Tensor x0 = randn({B, d}, rng), xi = randn({B, d}, rng);
    const Tensor y = eval_forward([&](Graph& g) { return layer.forward(g, g.constant(xi), g.constant(x0)); });
    const Tensor yc = eval_forward([&](Graph& g) {
      return cross_layer(g.constant(x0), g.constant(xi), g.constant(w), g.constant(bias));
    });
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<double> r0(x0.ptr() + b * d, x0.ptr() + (b + 1) * d), ri(xi.ptr() + b * d, xi.ptr() + (b + 1) * d);
      const auto ref = cross_layer_ref(r0, ri, {w.ptr(), w.ptr() + d}, {bias.ptr(), bias.ptr() + d});
      for (std::size_t k = 0; k < d; ++k) {
        worst = std::max(worst, std::abs(ref[k] - y[b * d + k]));
        worst = std::max(worst, std::abs(ref[k] - yc[b * d + k]));
      }
    }
  }
  return finish("feature_dpo degenerate config == cross layer", worst, 1e-10, instances);
}

CheckResult check_fm_degeneration(const OracleOptions& opt, std::size_t instances) {
  Rng rng(opt.seed ^ 0xf3);
  double worst = 0.0;  // error per pair
  for (std::size_t it = 0; it < instances; ++it) {
    const std::size_t t = pick(rng, 2, 6), e = pick(rng, 1, 8), B = 2;
    FieldDpoConfig cfg;
    cfg.t1 = cfg.t2 = t;
    cfg.n = e;
    cfg.c = 1;
    cfg.aggregation = Aggregation::Summation;
    cfg.exclude_self = true;
    cfg.bias = false;
    cfg.generator.kind = GeneratorKind::AffineFull;
    FieldDpo layer("fm", cfg, rng);
    Tensor& W_hat = layer.generator().param("W_hat").value;  // [e, e]: identity
    W_hat.fill(0.0);
    for (std::size_t i = 0; i < e; ++i) W_hat[i * e + i] = 1.0;
    layer.generator().param("b_hat").value.fill(0.0);
    if (opt.inject_fault) W_hat[0] += 1e-6;
    const Tensor X = randn({B, t, e}, rng);
    const Tensor y = eval_forward([&](Graph& g) {
      Var x = g.constant(X);
      return layer.forward(g, x, x);
    });
    const double pairs = static_cast<double>(t * (t - 1) / 2);
    for (std::size_t b = 0; b < B; ++b) {
      Tensor Xb({t, e}, std::vector<double>(X.ptr() + b * t * e, X.ptr() + (b + 1) * t * e));
      const auto ref = fm_pairwise_normalized(Xb);
      for (std::size_t i = 0; i < t; ++i) worst = std::max(worst, std::abs(ref[i] - y[b * t + i]) / pairs);
    }
  }
  return finish("field_dpo self-excluded identity == normalized FM (per pair)", worst, 1e-12, instances);
}

CheckResult check_homo_expansion(const OracleOptions& opt, std::size_t instances) {
  Rng rng(opt.seed ^ 0x12);
  double worst = 0.0;
  for (std::size_t it = 0; it < instances; ++it) {
    const std::size_t k = 2 * pick(rng, 0, 2) + 1, n = pick(rng, 1, 6), t = pick(rng, 1, 7), L = pick(rng, 1, 4);
    const bool depthwise = it % 2 == 0;
    const std::size_t c = depthwise ? 1 : pick(rng, 2, 5), B = 2;
    HomoDpoConfig cfg;
    cfg.k = k;
    cfg.n = n;
    cfg.c = c;
    cfg.generator.kind = GeneratorKind::LowRankMoK;
    cfg.generator.rank = L;
    cfg.generator.gate = Gate::Identity;
    cfg.generator.static_kernel = true;
    HomoDpo layer("homo", cfg, rng);
    const std::size_t gm = depthwise ? 1 : n, gc = depthwise ? n : c;
    std::vector<Tensor> W1(k), b1(k), E(k), W0(k);
    for (std::size_t l = 0; l < k; ++l) {
      Generator& gen = layer.generator(l);
      for (const char* role : {"W1", "b1", "experts", "W0"}) randomize(gen.param(role), rng);
      W1[l] = gen.param("W1").value;
      b1[l] = gen.param("b1").value;
      E[l] = gen.param("experts").value;
      W0[l] = gen.param("W0").value;
    }
    if (opt.inject_fault) layer.generator(0).param("experts").value[0] += 1e-6;
    const Tensor X = randn({B, t, n}, rng);
    const Tensor y = eval_forward([&](Graph& g) { return layer.forward(g, g.constant(X)); });
    const std::size_t out = layer.out_dim();
    const long half = static_cast<long>(k / 2);
    for (std::size_t b = 0; b < B; ++b) {
      auto xat = [&](std::size_t pos, std::size_t ch) { return X[(b * t + pos) * n + ch]; };
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t o = 0; o < out; ++o) {
          double ref = 0.0;
          for (std::size_t l = 0; l < k; ++l) {
            const long src = static_cast<long>(i) + static_cast<long>(l) - half;
            if (src < 0 || src >= static_cast<long>(t)) continue;
            const auto s = static_cast<std::size_t>(src);
            // kernel entry (ch, oc) of tap l lives at experts[kk][ch * gc + oc]
            auto bilinear_and_static = [&](std::size_t ch, std::size_t oc, std::size_t wrow) {
              double bil = 0.0;
              for (std::size_t j = 0; j < t; ++j)
                for (std::size_t a = 0; a < n; ++a) {
                  double A = 0.0;
                  for (std::size_t kk = 0; kk < L; ++kk) A += W1[l][a * L + kk] * E[l][kk * gm * gc + wrow * gc + oc];
                  bil += xat(j, a) * A;
                }
              bil /= static_cast<double>(t);
              double Ws = W0[l][wrow * gc + oc];
              for (std::size_t kk = 0; kk < L; ++kk) Ws += b1[l][kk] * E[l][kk * gm * gc + wrow * gc + oc];
              return (bil + Ws) * xat(s, ch);
            };
            if (depthwise) {
              ref += bilinear_and_static(o, o, 0);
            } else {
              for (std::size_t ch = 0; ch < n; ++ch) ref += bilinear_and_static(ch, o, ch);
            }
          }
          worst = std::max(worst, std::abs(ref - y[(b * t + i) * out + o]));
        }
      }
    }
  }
  return finish("homo_dpo identity gate == expanded bilinear form", worst, 1e-10, instances);
}

CheckResult check_hetero_expansion(const OracleOptions& opt, std::size_t instances) {
  Rng rng(opt.seed ^ 0x14);
  double worst = 0.0;
  for (std::size_t it = 0; it < instances; ++it) {
    const std::size_t m = pick(rng, 1, 6), n = pick(rng, 1, 6), c = pick(rng, 1, 6), t = pick(rng, 1, 6),
                      L = pick(rng, 1, 4), B = 2;
    HeteroDpoConfig cfg;
    cfg.m = m;
    cfg.n = n;
    cfg.c = c;
    cfg.generator.kind = GeneratorKind::LowRankMoK;
    cfg.generator.rank = L;
    cfg.generator.gate = Gate::Identity;
    cfg.generator.static_kernel = true;
    HeteroDpo layer("hetero", cfg, rng);
    Generator& gen = layer.generator();
    for (const char* role : {"W1", "b1", "experts", "expert_bias", "W0", "b0"}) randomize(gen.param(role), rng);
    const Tensor W1 = gen.param("W1").value, b1 = gen.param("b1").value, E = gen.param("experts").value;
    const Tensor Eb = gen.param("expert_bias").value, W0 = gen.param("W0").value, b0 = gen.param("b0").value;
    if (opt.inject_fault) gen.param("experts").value[0] += 1e-6;
    const Tensor q = randn({B, m}, rng), Z = randn({B, t, n}, rng);
    const Tensor y = eval_forward([&](Graph& g) { return layer.forward(g, g.constant(q), g.constant(Z)); });
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<double> zbar(n, 0.0);
      for (std::size_t j = 0; j < t; ++j)
        for (std::size_t a = 0; a < n; ++a) zbar[a] += Z[(b * t + j) * n + a] / static_cast<double>(t);
      for (std::size_t o = 0; o < c; ++o) {
        double ref = b0[o];
        for (std::size_t i = 0; i < m; ++i) {
          double Ws = W0[i * c + o];
          for (std::size_t kk = 0; kk < L; ++kk) Ws += b1[kk] * E[kk * m * c + i * c + o];
          double bil = 0.0;
          for (std::size_t a = 0; a < n; ++a) {
            double A = 0.0;
            for (std::size_t kk = 0; kk < L; ++kk) A += W1[a * L + kk] * E[kk * m * c + i * c + o];
            bil += zbar[a] * A;
          }
          ref += (bil + Ws) * q[b * m + i];
        }
        for (std::size_t kk = 0; kk < L; ++kk) {
          double s = b1[kk];
          for (std::size_t a = 0; a < n; ++a) s += zbar[a] * W1[a * L + kk];
          ref += s * Eb[kk * c + o];
        }
        worst = std::max(worst, std::abs(ref - y[b * c + o]));
      }
    }
  }
  return finish("hetero_dpo identity gate == expanded bilinear form", worst, 1e-10, instances);
}

CheckResult check_multihead_single(const OracleOptions& opt) {
  Rng rng(opt.seed ^ 0x77);
  double worst = 0.0;
  std::size_t count = 0;
  const GeneratorKind kinds[] = {GeneratorKind::AffineFull, GeneratorKind::HyperDense, GeneratorKind::LowRankMoK,
                                 GeneratorKind::MatrixDecomp, GeneratorKind::MatrixDecompResidual,
                                 GeneratorKind::SELayer};
  const std::pair<std::size_t, std::size_t> heads[] = {{1, 1}, {2, 2}, {1, 2}, {2, 1}, {3, 3}};
  for (auto kind : kinds) {
    for (auto [h1, h2] : heads) {
      const bool multi = h1 > 1 || h2 > 1;
      if (multi && kind != GeneratorKind::AffineFull && kind != GeneratorKind::HyperDense &&
          kind != GeneratorKind::LowRankMoK) {
        continue;
      }
      GeneratorSpec spec;
      spec.kind = kind;
      spec.heads_in = h1;
      spec.heads_out = h2;
      spec.core_rank = 3;
      spec.gate = Gate::Sigmoid;
      const std::size_t n = 4, m = 6, c = 6, B = 3, rows = 2;
      Generator gen("g", spec, n, m, c, true, rng);
      for (Parameter* p : gen.parameters()) randomize(*p, rng);
      if (opt.inject_fault) gen.parameters().front()->value[0] += 1e-6;
      const Tensor x = randn({B, rows, m}, rng), z = randn({B, n}, rng);
      Graph g;
      Var code = gen.encode(g, g.constant(z));
      const Tensor fused = gen.apply(g, g.constant(x), code).value();
      DynamicWeights w = gen.decode(g, code);
      const Tensor& W = w.weight.value();
      const Tensor& bias = w.bias.value();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < c; ++o) {
            double ref = bias[b * c + o];
            for (std::size_t i = 0; i < m; ++i) ref += W[(b * m + i) * c + o] * x[(b * rows + r) * m + i];
            worst = std::max(worst, std::abs(ref - fused[(b * rows + r) * c + o]));
          }
      // block-diagonal structure when both sides are split
      if (h1 > 1 && h2 > 1) {
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t o = 0; o < c; ++o)
              if (i / (m / h1) != o / (c / h2)) worst = std::max(worst, std::abs(W[(b * m + i) * c + o]));
      }
      ++count;
    }
    // (1,1) explicitly requested vs default spec: bitwise
    GeneratorSpec a;
    a.kind = kind;
    a.core_rank = 3;
    GeneratorSpec bspec = a;
    bspec.heads_in = bspec.heads_out = 1;
    Rng r1(opt.seed), r2(opt.seed);
    Generator ga("g", a, 3, 4, 5, true, r1), gb("g", bspec, 3, 4, 5, true, r2);
    const Tensor z = randn({2, 3}, rng), x = randn({2, 1, 4}, rng);
    Graph g;
    const Tensor ya = ga.apply(g, g.constant(x), ga.encode(g, g.constant(z))).value();
    const Tensor yb = gb.apply(g, g.constant(x), gb.encode(g, g.constant(z))).value();
    if (!(ya == yb)) worst = std::max(worst, 1.0);
  }
  return finish("generator fused apply == materialized weights (all kinds, heads)", worst, 1e-10, count);
}

double auc_pairwise(const std::vector<double>& scores, const std::vector<double>& labels) {
  double num = 0.0, pos = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] > 0.5 ? pos : neg) += 1.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] <= 0.5) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] > 0.5) continue;
      if (scores[i] > scores[j]) {
        num += 1.0;
      } else if (scores[i] == scores[j]) {
        num += 0.5;
      }
    }
  }
  return num / (pos * neg);
}

CheckResult check_auc_bruteforce(const OracleOptions& opt, std::size_t sets, std::size_t points) {
  Rng rng(opt.seed ^ 0xa0c);
  double worst = 0.0;
  for (std::size_t s = 0; s < sets; ++s) {
    std::vector<double> scores(points), labels(points);
    std::uniform_int_distribution<int> level(0, 9);
    std::bernoulli_distribution coin(0.4);
    for (std::size_t i = 0; i < points; ++i) {
      scores[i] = s % 2 ? level(rng) / 10.0 : std::uniform_real_distribution<double>(0, 1)(rng);
      labels[i] = coin(rng) ? 1.0 : 0.0;
    }
    labels[0] = 1.0;
    labels[1] = 0.0;
    worst = std::max(worst, std::abs(auc(scores, labels) - auc_pairwise(scores, labels)));
  }
  // exact: both sides are the same rational computed without rounding slack
  return CheckResult{"auc rank-sum == pairwise brute force", worst, 0.0, worst == 0.0, sets, "exact equality"};
}

CheckResult check_adam_trace(const OracleOptions& opt, std::size_t steps) {
  Rng rng(opt.seed ^ 0xada);
  AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  Parameter dense("w", randn({5}, rng));
  Parameter table("emb", randn({4, 2}, rng), true);
  Adam adam({&dense, &table}, cfg);
  std::vector<double> w(dense.value.ptr(), dense.value.ptr() + 5), m(5, 0.0), v(5, 0.0);
  std::vector<double> e(table.value.ptr(), table.value.ptr() + 8), me(8, 0.0), ve(8, 0.0);
  double worst = 0.0;
  for (std::size_t t = 1; t <= steps; ++t) {
    adam.zero_grad();
    const Tensor g = randn({5}, rng);
    dense.grad = g;
    // rows 1 and (t % 4) get gradient this step
    const std::size_t rows[2] = {1, t % 4};
    std::vector<double> ge(8, 0.0);
    for (std::size_t r : rows) {
      for (std::size_t k = 0; k < 2; ++k) {
        const double gv = std::normal_distribution<double>(0, 1)(rng);
        table.grad[r * 2 + k] += gv;
        ge[r * 2 + k] += gv;
      }
      table.mark_row(r);
    }
    adam.step();
    if (opt.inject_fault && t == 1) dense.value[0] += 1e-9;
    const double c1 = 1.0 - std::pow(0.9, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(0.999, static_cast<double>(t));
    for (std::size_t i = 0; i < 5; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      w[i] -= 0.01 * (m[i] / c1) / (std::sqrt(v[i] / c2) + 1e-8);
      worst = std::max(worst, std::abs(w[i] - dense.value[i]));
    }
    for (std::size_t r = 0; r < 4; ++r) {
      const bool touched = r == rows[0] || r == rows[1];
      for (std::size_t k = 0; k < 2; ++k) {
        const std::size_t i = r * 2 + k;
        if (touched) {
          me[i] = 0.9 * me[i] + 0.1 * ge[i];
          ve[i] = 0.999 * ve[i] + 0.001 * ge[i] * ge[i];
          e[i] -= 0.01 * (me[i] / c1) / (std::sqrt(ve[i] / c2) + 1e-8);
        }
        worst = std::max(worst, std::abs(e[i] - table.value[i]));
      }
    }
  }
  return finish("adam (dense + lazy sparse) == reference recurrence", worst, 1e-12, steps);
}

CheckResult check_fm_square_identity(const OracleOptions& opt, std::size_t instances) {
  Rng rng(opt.seed ^ 0xf5);
  double worst = 0.0;
  for (std::size_t it = 0; it < instances; ++it) {
    const std::size_t t = pick(rng, 2, 8), e = pick(rng, 1, 8);
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
    worst = std::max(worst, std::abs(id - fm_pairwise(X)));
  }
  return finish("fm pairwise == square-of-sum identity", worst, 1e-10, instances);
}

namespace {

/// Wraps inputs as parameters so their gradients are checked with the weights.
double layer_gradcheck(Module& layer, std::vector<Parameter*> inputs, const std::function<Var(Graph&)>& f,
                       std::uint64_t seed) {
  std::vector<Parameter*> ps = layer.parameters();
  ps.insert(ps.end(), inputs.begin(), inputs.end());
  const GradCheckResult r = grad_check_params(f, ps, 1e-5, 24, seed);
  if (!r.finite || r.checked == 0) return -1.0;
  return r.max_rel_error;
}

GeneratorSpec gen_of(GeneratorKind k, Gate gate = Gate::Softmax) {
  GeneratorSpec s;
  s.kind = k;
  s.gate = gate;
  s.rank = 3;
  s.core_rank = 3;
  s.se_down_ratio = 0.5;
  return s;
}

GradCase feature_case(const std::string& name, GeneratorSpec spec, std::size_t m = 4, std::size_t c = 4) {
  return {name, [spec, m, c](std::uint64_t seed) {
            Rng rng(seed);
            FeatureDpo layer("f", {m, 3, c, spec, true}, rng);
            for (Parameter* p : layer.parameters()) randomize(*p, rng, 0.4);
            Parameter x("x", randn({3, m}, rng)), z("z", randn({3, 3}, rng));
            return layer_gradcheck(layer, {&x, &z},
                                   [&](Graph& g) { return layer.forward(g, g.param(x), g.param(z)); }, seed);
          }};
}

GradCase field_case(const std::string& name, Aggregation agg, bool implicit, bool exclude_self = false) {
  return {name, [=](std::uint64_t seed) {
            Rng rng(seed);
            FieldDpoConfig cfg;
            cfg.t1 = cfg.t2 = 3;
            cfg.n = 3;
            cfg.c = 2;
            cfg.aggregation = agg;
            cfg.implicit_branch = implicit;
            cfg.exclude_self = exclude_self;
            cfg.generator = gen_of(GeneratorKind::LowRankMoK);
            FieldDpo layer("fd", cfg, rng);
            for (Parameter* p : layer.parameters()) randomize(*p, rng, 0.4);
            Parameter X("X", randn({2, 3, 3}, rng)), Z("Z", randn({2, 3, 3}, rng));
            return layer_gradcheck(layer, {&X, &Z},
                                   [&](Graph& g) { return layer.forward(g, g.param(X), g.param(Z)); }, seed);
          }};
}

GradCase homo_case(const std::string& name, std::size_t c, LocalEncoder enc, bool bias) {
  return {name, [=](std::uint64_t seed) {
            Rng rng(seed);
            HomoDpoConfig cfg;
            cfg.k = 3;
            cfg.n = 3;
            cfg.c = c;
            cfg.local_encoder = enc;
            cfg.bias = bias;
            cfg.generator = gen_of(GeneratorKind::LowRankMoK);
            HomoDpo layer("h", cfg, rng);
            for (Parameter* p : layer.parameters()) randomize(*p, rng, 0.4);
            Parameter X("X", randn({2, 4, 3}, rng));
            return layer_gradcheck(layer, {&X}, [&](Graph& g) { return layer.forward(g, g.param(X)); }, seed);
          }};
}

/// Full model from ids to logits, so embedding rows receive their gradient
/// through gather/scatter.
GradCase model_case(const std::string& name, ModelSpec spec) {
  return {name, [spec](std::uint64_t seed) {
            Rng rng(seed);
            Model model(spec, rng);
            for (Parameter* p : model.parameters()) randomize(*p, rng, 0.4);
            Batch b;
            b.size = 6;
            std::uniform_int_distribution<std::int64_t> pick(0, 3);
            for (std::size_t f = 0; f < spec.schema.size(); ++f) {
              std::vector<std::int64_t> ids(b.size);
              for (auto& v : ids) v = pick(rng);
              b.fields.push_back(ids);
            }
            if (spec.family == Family::Sdpn) {
              b.seq_len = 4;
              for (std::size_t i = 0; i < b.size * b.seq_len; ++i) b.history.push_back(pick(rng));
              b.history[0] = 0;  // padding id
            }
            b.labels.assign(b.size, 0.0);
            return layer_gradcheck(model, {}, [&](Graph& g) { return model.forward(g, b, true); }, seed);
          }};
}

ModelSpec tiny_spec(Family family) {
  ModelSpec s;
  s.schema.add({"user", 4, false});
  s.schema.add({"item", 4, false});
  s.schema.add({"tag", 4, false});
  s.family = family;
  s.embed_dim = 3;
  return s;
}

}  // namespace

std::vector<GradCase> gradcheck_cases() {
  std::vector<GradCase> cases;
  cases.push_back(feature_case("feature_dpo/affine_full", gen_of(GeneratorKind::AffineFull)));
  cases.push_back(feature_case("feature_dpo/hyper_dense", gen_of(GeneratorKind::HyperDense)));
  cases.push_back(feature_case("feature_dpo/mok_softmax", gen_of(GeneratorKind::LowRankMoK)));
  cases.push_back(feature_case("feature_dpo/mok_sigmoid", gen_of(GeneratorKind::LowRankMoK, Gate::Sigmoid)));
  cases.push_back(feature_case("feature_dpo/mok_identity", gen_of(GeneratorKind::LowRankMoK, Gate::Identity)));
  cases.push_back(feature_case("feature_dpo/matrix_decomp", gen_of(GeneratorKind::MatrixDecomp)));
  cases.push_back(feature_case("feature_dpo/matrix_decomp_residual", gen_of(GeneratorKind::MatrixDecompResidual)));
  cases.push_back(feature_case("feature_dpo/se", gen_of(GeneratorKind::SELayer)));
  {
    GeneratorSpec s = gen_of(GeneratorKind::LowRankMoK);
    s.heads_in = s.heads_out = 2;
    cases.push_back(feature_case("feature_dpo/mok_heads_2x2", s));
    s.heads_in = 1;
    cases.push_back(feature_case("feature_dpo/mok_heads_1x2", s));
  }
  cases.push_back(field_case("field_dpo/summation", Aggregation::Summation, false));
  cases.push_back(field_case("field_dpo/summation_exclude_self", Aggregation::Summation, false, true));
  cases.push_back(field_case("field_dpo/self", Aggregation::Self, false));
  cases.push_back(field_case("field_dpo/attention", Aggregation::Attention, false));
  cases.push_back(field_case("field_dpo/concat", Aggregation::Concat, false));
  cases.push_back(field_case("field_dpo/concat_implicit", Aggregation::Concat, true));
  cases.push_back(homo_case("homo_dpo/depthwise", 1, LocalEncoder::None, false));
  cases.push_back(homo_case("homo_dpo/full_bias", 2, LocalEncoder::None, true));
  cases.push_back(homo_case("homo_dpo/conv_encoder", 1, LocalEncoder::Conv, false));
  cases.push_back(homo_case("homo_dpo/sep_conv_encoder", 2, LocalEncoder::SepConv, false));
  cases.push_back({"hetero_dpo", [](std::uint64_t seed) {
                     Rng rng(seed);
                     HeteroDpoConfig cfg{3, 4, 2, gen_of(GeneratorKind::LowRankMoK), true};
                     HeteroDpo layer("q", cfg, rng);
                     for (Parameter* p : layer.parameters()) randomize(*p, rng, 0.4);
                     Parameter q("q", randn({2, 3}, rng)), Z("Z", randn({2, 5, 4}, rng));
                     return layer_gradcheck(layer, {&q, &Z},
                                            [&](Graph& g) { return layer.forward(g, g.param(q), g.param(Z)); }, seed);
                   }});
  cases.push_back({"batchnorm", [](std::uint64_t seed) {
                     Rng rng(seed);
                     BatchNorm bn("bn", 4);
                     randomize(bn.gamma, rng);
                     randomize(bn.beta, rng);
                     Parameter x("x", randn({8, 4}, rng));
                     return layer_gradcheck(bn, {&x}, [&](Graph& g) { return bn.forward(g, g.param(x), true); }, seed);
                   }});
  cases.push_back({"mhsa", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Mhsa att("att", {4, 2}, rng);
                     Parameter K("K", randn({2, 3, 4}, rng)), Q("Q", randn({2, 2, 4}, rng));
                     return layer_gradcheck(att, {&K, &Q},
                                            [&](Graph& g) {
                                              Var k = g.param(K);
                                              return att.forward(g, k, k, g.param(Q));
                                            },
                                            seed);
                   }});
  cases.push_back({"mlp_bn_relu", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Mlp mlp("mlp", 3, {{5, Activation::Relu, true}, {2, Activation::Tanh, false}}, rng);
                     Parameter x("x", randn({6, 3}, rng));
                     return layer_gradcheck(mlp, {&x}, [&](Graph& g) { return mlp.forward(g, g.param(x), true); },
                                            seed);
                   }});
  cases.push_back({"field_dnn", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Parameter X("X", randn({2, 3, 4}, rng)), Wf("Wf", randn({3, 3}, rng)), Wl("Wl", randn({4, 2}, rng));
                     std::vector<Parameter*> ps{&X, &Wf, &Wl};
                     const auto r = grad_check_params(
                         [&](Graph& g) { return field_dnn(g.param(X), g.param(Wf), g.param(Wl)); }, ps, 1e-5, 24, seed);
                     return r.finite && r.checked ? r.max_rel_error : -1.0;
                   }});
  {
    ModelSpec s = tiny_spec(Family::FeatureDpn);
    LayerSpec l1;
    l1.kind = LayerKind::Feature;
    l1.units = 4;
    l1.context = ContextRef::parse("z:user");
    l1.generator = gen_of(GeneratorKind::LowRankMoK);
    LayerSpec l2 = l1;
    l2.context = ContextRef::parse("x_prev");
    l2.units = 3;
    s.layers = {l1, l2};
    cases.push_back(model_case("model/feature_dpn_embeddings", s));
  }
  {
    ModelSpec s = tiny_spec(Family::Hybrid);
    LayerSpec f;
    f.kind = LayerKind::Field;
    f.units = 3;
    f.context = ContextRef::parse("z0");
    f.aggregation = Aggregation::Attention;
    f.implicit_branch = true;
    f.generator = gen_of(GeneratorKind::AffineFull);
    LayerSpec d;
    d.units = 4;
    s.layers = {f, d};
    cases.push_back(model_case("model/hybrid_embeddings", s));
  }
  {
    ModelSpec s = tiny_spec(Family::Sdpn);
    s.embed_dim = 4;
    s.sequence.encoder = SeqEncoder::Both;
    s.sequence.decoder = SeqDecoder::Both;
    s.sequence.heads = 2;
    s.sequence.generator = gen_of(GeneratorKind::LowRankMoK);
    LayerSpec d;
    d.units = 3;
    s.layers = {d};
    cases.push_back(model_case("model/sdpn_embeddings", s));
  }
  return cases;
}

CheckResult run_gradcase(const GradCase& gc, std::size_t seeds, double tol) {
  double worst = 0.0;
  bool ok = true;
  for (std::size_t s = 0; s < seeds; ++s) {
    const double e = gc.run(1000 + s);
    if (e < 0) {
      ok = false;
    } else {
      worst = std::max(worst, e);
    }
  }
  CheckResult r = finish("gradcheck " + gc.name, worst, tol, seeds);
  if (!ok) {
    r.passed = false;
    r.detail = "non-finite output or no probeable coordinate";
  }
  return r;
}

std::vector<CheckResult> run_suite(const std::string& suite, const OracleOptions& opt) {
  const bool all = suite == "all";
  if (!all && suite != "identities" && suite != "gradcheck" && suite != "oracles") {
    throw UsageError("unknown suite \"" + suite + "\" (expected identities, gradcheck, oracles or all)");
  }
  std::vector<CheckResult> out;
  if (all || suite == "identities") {
    out.push_back(check_affine_expansion(opt));
    out.push_back(check_cross_degeneration(opt));
    out.push_back(check_fm_degeneration(opt));
    out.push_back(check_homo_expansion(opt));
    out.push_back(check_hetero_expansion(opt));
    out.push_back(check_multihead_single(opt));
  }
  if (all || suite == "oracles") {
    out.push_back(check_fm_square_identity(opt));
    out.push_back(check_auc_bruteforce(opt));
    out.push_back(check_adam_trace(opt));
  }
  if (all || suite == "gradcheck") {
    for (const auto& gc : gradcheck_cases()) out.push_back(run_gradcase(gc));
  }
  return out;
}

}  // namespace dpn
