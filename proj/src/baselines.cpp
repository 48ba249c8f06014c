#include "dpn/baselines.hpp"

#include <cmath>

#include "dpn/error.hpp"
#include "dpn/rng.hpp"

namespace dpn {

Linear::Linear(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng, bool with_bias)
    : has_bias(with_bias) {
  if (in == 0 || out == 0) throw ConfigError(name + ": extents must be positive");
  Tensor w({in, out});
  glorot_uniform(w, in, out, rng);
  weight = Parameter(name + ".W", std::move(w));
  if (has_bias) bias = Parameter(name + ".b", Tensor({out}));
}

Var Linear::forward(Graph& g, Var x) {
  if (x.rank() < 1 || x.shape().back() != in()) {
    throw DimensionError(weight.name + ": input last extent must be " + std::to_string(in()) + ", got " +
                         shape_str(x.shape()));
  }
  Var y = matmul(x.rank() == 1 ? reshape(x, {1, in()}) : x, g.param(weight));
  if (has_bias) y = add(y, g.param(bias));
  return x.rank() == 1 ? reshape(y, {out()}) : y;
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

BatchNorm::BatchNorm(std::string name, std::size_t dim)
    : gamma(name + ".gamma", Tensor({dim}, 1.0)), beta(name + ".beta", Tensor({dim})), name_(std::move(name)) {
  state.running_mean = Tensor({dim});
  state.running_var = Tensor({dim}, 1.0);
}

Var BatchNorm::forward(Graph& g, Var x, bool training) {
  if (x.rank() == 2) return batchnorm(x, g.param(gamma), g.param(beta), state, training);
  const Shape s = x.shape();
  const std::size_t d = s.back();
  Var y = batchnorm(reshape(x, {x.value().size() / d, d}), g.param(gamma), g.param(beta), state, training);
  return reshape(y, s);
}

void BatchNorm::collect(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

void BatchNorm::collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out) {
  out.emplace_back(name_ + ".running_mean", &state.running_mean);
  out.emplace_back(name_ + ".running_var", &state.running_var);
}

Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::None: return x;
    case Activation::Relu: return relu(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Tanh: return tanh(x);
  }
  return x;
}

Mlp::Mlp(std::string name, std::size_t in, const std::vector<MlpLayer>& layers, std::mt19937_64& rng)
    : spec_(layers), out_(in) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = name + ".fc" + std::to_string(i + 1);
    linears_.push_back(std::make_unique<Linear>(p, out_, layers[i].units, rng));
    norms_.push_back(layers[i].batchnorm ? std::make_unique<BatchNorm>(p + ".bn", layers[i].units) : nullptr);
    out_ = layers[i].units;
  }
}

Var Mlp::forward(Graph& g, Var x, bool training) {
  for (std::size_t i = 0; i < linears_.size(); ++i) {
    x = linears_[i]->forward(g, x);
    if (norms_[i]) x = norms_[i]->forward(g, x, training);
    x = activate(x, spec_[i].activation);
  }
  return x;
}

void Mlp::collect(std::vector<Parameter*>& out) {
  for (std::size_t i = 0; i < linears_.size(); ++i) {
    linears_[i]->collect(out);
    if (norms_[i]) norms_[i]->collect(out);
  }
}

void Mlp::collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out) {
  for (auto& n : norms_)
    if (n) n->collect_buffers(out);
}

Var cross_layer(Var x0, Var xi, Var w, Var b) {
  if (x0.shape() != xi.shape() || x0.rank() != 2 || w.rank() != 1 || w.dim(0) != x0.dim(1) || b.shape() != w.shape()) {
    throw DimensionError("cross_layer: x0 " + shape_str(x0.shape()) + ", xi " + shape_str(xi.shape()) + ", w " +
                         shape_str(w.shape()) + ", b " + shape_str(b.shape()));
  }
  const std::size_t d = w.dim(0);
  Var s = matmul(xi, reshape(w, {d, 1}));  // [B, 1]
  return add(add(mul(x0, s), b), xi);
}

std::vector<double> cross_layer_ref(const std::vector<double>& x0, const std::vector<double>& xi,
                                    const std::vector<double>& w, const std::vector<double>& b) {
  const std::size_t d = x0.size();
  if (xi.size() != d || w.size() != d || b.size() != d) throw DimensionError("cross_layer_ref: length mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += xi[k] * w[k];
  std::vector<double> y(d);
  for (std::size_t k = 0; k < d; ++k) y[k] = x0[k] * s + b[k] + xi[k];
  return y;
}

namespace {

void require_fm_input(const Tensor& X) {
  if (X.rank() != 2) throw DimensionError("fm_pairwise: X must be [t, e], got " + shape_str(X.shape()));
  if (X.dim(0) < 2) throw DimensionError("fm_pairwise: needs t >= 2 fields, got " + std::to_string(X.dim(0)));
}

double row_dot(const Tensor& X, std::size_t i, std::size_t j) {
  const std::size_t e = X.dim(1);
  double s = 0.0;
  for (std::size_t k = 0; k < e; ++k) s += X[i * e + k] * X[j * e + k];
  return s;
}

}  // namespace

double fm_pairwise(const Tensor& X) {
  require_fm_input(X);
  const std::size_t t = X.dim(0);
  double s = 0.0;
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = i + 1; j < t; ++j) s += row_dot(X, i, j);
  return s;
}

std::vector<double> fm_pairwise_normalized(const Tensor& X) {
  require_fm_input(X);
  const std::size_t t = X.dim(0);
  std::vector<double> y(t, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j)
      if (j != i) y[i] += row_dot(X, i, j);
    y[i] /= static_cast<double>(t - 1);
  }
  return y;
}

Var field_dnn(Var X, Var W_f, Var W_l) {
  if (X.rank() != 3 || W_f.rank() != 2 || W_l.rank() != 2 || W_f.dim(0) != X.dim(1) || W_f.dim(1) != X.dim(1) ||
      W_l.dim(0) != X.dim(2)) {
    throw DimensionError("field_dnn: X " + shape_str(X.shape()) + ", W_f " + shape_str(W_f.shape()) + ", W_l " +
                         shape_str(W_l.shape()));
  }
  return matmul(matmul(W_f, X), W_l);
}

Mhsa::Mhsa(std::string name, const MhsaConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.d_model == 0 || cfg.heads == 0 || cfg.d_model % cfg.heads != 0) {
    throw ConfigError(name + ": heads (" + std::to_string(cfg.heads) + ") must divide d_model (" +
                      std::to_string(cfg.d_model) + ")");
  }
  const std::size_t d = cfg.d_model;
  auto mk = [&](const char* role) {
    Tensor t({d, d});
    glorot_uniform(t, d, d, rng);
    return Parameter(name + "." + role, std::move(t));
  };
  Wq = mk("Wq");
  Wk = mk("Wk");
  Wv = mk("Wv");
  Wo = mk("Wo");
}

Var Mhsa::forward(Graph& g, Var K, Var V, Var Q, Var* attention) {
  const std::size_t d = cfg_.d_model, h = cfg_.heads, dk = d / h;
  if (K.rank() != 3 || K.dim(2) != d || V.shape() != K.shape() || Q.rank() != 3 || Q.dim(2) != d ||
      Q.dim(0) != K.dim(0)) {
    throw DimensionError("mhsa: K " + shape_str(K.shape()) + ", V " + shape_str(V.shape()) + ", Q " +
                         shape_str(Q.shape()) + " with d_model " + std::to_string(d));
  }
  const std::size_t B = K.dim(0), t = K.dim(1), s = Q.dim(1);
  auto heads = [&](Var x, Parameter& w, std::size_t len) {
    // [B, len, d] -> [B, h, len, dk]
    return permute(reshape(matmul(x, g.param(w)), {B, len, h, dk}), {0, 2, 1, 3});
  };
  Var q = heads(Q, Wq, s);
  Var k = heads(K, Wk, t);
  Var v = heads(V, Wv, t);
  Var logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dk)));  // [B, h, s, t]
  Var att = softmax(logits, -1);
  if (attention) *attention = att;
  Var o = reshape(permute(matmul(att, v), {0, 2, 1, 3}), {B, s, d});
  return matmul(o, g.param(Wo));
}

void Mhsa::collect(std::vector<Parameter*>& out) {
  for (Parameter* p : {&Wq, &Wk, &Wv, &Wo}) out.push_back(p);
}

}  // namespace dpn
