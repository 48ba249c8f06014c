#include "dpn/dpo.hpp"

#include "dpn/error.hpp"
#include "dpn/rng.hpp"

namespace dpn {

namespace {

void require_shape(const Var& v, const Shape& want, const std::string& who, std::string_view what) {
  const Shape& s = v.shape();
  bool ok = s.size() == want.size();
  for (std::size_t i = 0; ok && i < s.size(); ++i) ok = want[i] == 0 || want[i] == s[i];
  if (!ok) {
    std::string w = "[";
    for (std::size_t i = 0; i < want.size(); ++i) w += (i ? "," : "") + (want[i] ? std::to_string(want[i]) : "B");
    throw DimensionError(who + ": " + std::string(what) + " must be " + w + "], got " + shape_str(s));
  }
}

Parameter glorot_param(std::string name, Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  glorot_uniform(t, fan_in, fan_out, rng);
  return Parameter(std::move(name), std::move(t));
}

}  // namespace

FeatureDpo::FeatureDpo(std::string name, const FeatureDpoConfig& cfg, std::mt19937_64& rng)
    : name_(name), cfg_(cfg), gen_(name + ".gen", cfg.generator, cfg.n, cfg.m, cfg.c, cfg.bias, rng) {}

Var FeatureDpo::forward(Graph& g, Var x, Var z) const {
  require_shape(x, {0, cfg_.m}, name_, "input x");
  require_shape(z, {0, cfg_.n}, name_, "context z");
  if (x.dim(0) != z.dim(0)) throw DimensionError(name_ + ": batch of x and z differ");
  const std::size_t B = x.dim(0);
  Var y = gen_.apply(g, reshape(x, {B, 1, cfg_.m}), gen_.encode(g, z));
  return reshape(y, {B, cfg_.c});
}

std::string_view aggregation_name(Aggregation a) {
  switch (a) {
    case Aggregation::Summation: return "summation";
    case Aggregation::Self: return "self";
    case Aggregation::Attention: return "attention";
    case Aggregation::Concat: return "concat";
  }
  return "?";
}

Aggregation parse_aggregation(std::string_view s) {
  for (auto a : {Aggregation::Summation, Aggregation::Self, Aggregation::Attention, Aggregation::Concat}) {
    if (aggregation_name(a) == s) return a;
  }
  throw ConfigError("unknown aggregation \"" + std::string(s) + "\"");
}

namespace {

std::size_t field_gen_input(const FieldDpoConfig& cfg) {
  return cfg.aggregation == Aggregation::Concat ? cfg.t2 * cfg.n : cfg.n;
}

}  // namespace

FieldDpo::FieldDpo(std::string name, const FieldDpoConfig& cfg, std::mt19937_64& rng)
    : name_(name), cfg_(cfg), gen_(name + ".gen", cfg.generator, field_gen_input(cfg), cfg.n, cfg.c, cfg.bias, rng) {
  if (cfg.t1 == 0 || cfg.t2 == 0) throw ConfigError(name_ + ": field counts must be positive");
  if (cfg.aggregation == Aggregation::Self && cfg.t1 != cfg.t2) {
    throw ConfigError(name_ + ": self aggregation needs t1 == t2, got " + std::to_string(cfg.t1) + " and " +
                      std::to_string(cfg.t2));
  }
  if (cfg.exclude_self) {
    if (cfg.aggregation != Aggregation::Summation) throw ConfigError(name_ + ": exclude_self applies to summation only");
    if (cfg.t1 != cfg.t2 || cfg.t2 < 2) throw ConfigError(name_ + ": exclude_self needs t1 == t2 >= 2");
  }
  if (cfg.aggregation == Aggregation::Attention) {
    att_w_ = glorot_param(name + ".att_w", {cfg.t2, cfg.n}, cfg.n, 1, rng);
    att_b_ = Parameter(name + ".att_b", Tensor({cfg.t2}));
  }
  if (cfg.implicit_branch) {
    w_f_ = glorot_param(name + ".W_f", {cfg.t1, cfg.t1}, cfg.t1, cfg.t1, rng);
    w_l_ = glorot_param(name + ".W_l", {cfg.n, cfg.c}, cfg.n, cfg.c, rng);
  }
}

void FieldDpo::collect(std::vector<Parameter*>& out) {
  gen_.collect(out);
  if (cfg_.aggregation == Aggregation::Attention) {
    out.push_back(&att_w_);
    out.push_back(&att_b_);
  }
  if (cfg_.implicit_branch) {
    out.push_back(&w_f_);
    out.push_back(&w_l_);
  }
}

Var FieldDpo::forward(Graph& g, Var X, Var Z) {
  const std::size_t t1 = cfg_.t1, t2 = cfg_.t2, n = cfg_.n, c = cfg_.c;
  require_shape(X, {0, t1, n}, name_, "input X");
  const std::size_t B = X.dim(0);
  if (cfg_.aggregation == Aggregation::Self) {
    Z = X;
  } else {
    require_shape(Z, {B, t2, n}, name_, "context Z");
  }
  const std::size_t d = gen_.code_dim();
  Var y;
  switch (cfg_.aggregation) {
    case Aggregation::Summation: {
      Var codes = reshape(gen_.encode(g, reshape(Z, {B * t2, n})), {B, t2, d});
      if (cfg_.exclude_self) {
        // code_i = (sum_j code_j - code_i) / (t - 1), then per-field weights.
        Var total = sum(codes, 1, true);
        Var pooled = scale(sub(total, codes), 1.0 / static_cast<double>(t2 - 1));
        y = reshape(gen_.apply(g, reshape(X, {B * t1, 1, n}), reshape(pooled, {B * t1, d})), {B, t1, c});
      } else {
        y = gen_.apply(g, X, mean(codes, 1));
      }
      break;
    }
    case Aggregation::Self: {
      Var codes = gen_.encode(g, reshape(X, {B * t1, n}));
      y = reshape(gen_.apply(g, reshape(X, {B * t1, 1, n}), codes), {B, t1, c});
      break;
    }
    case Aggregation::Attention: {
      Var codes = reshape(gen_.encode(g, reshape(Z, {B * t2, n})), {B, t2, d});
      Var scores = add(sum(mul(Z, g.param(att_w_)), 2), g.param(att_b_));
      Var alpha = softmax(scores, 1);  // [B, t2]
      Var pooled = reshape(matmul(reshape(alpha, {B, 1, t2}), codes), {B, d});
      y = gen_.apply(g, X, pooled);
      break;
    }
    case Aggregation::Concat: {
      y = gen_.apply(g, X, gen_.encode(g, reshape(Z, {B, t2 * n})));
      break;
    }
  }
  if (cfg_.implicit_branch) {
    y = add(y, matmul(matmul(g.param(w_f_), X), g.param(w_l_)));
  }
  return y;
}

std::string_view local_encoder_name(LocalEncoder e) {
  switch (e) {
    case LocalEncoder::None: return "none";
    case LocalEncoder::Conv: return "conv";
    case LocalEncoder::SepConv: return "sep_conv";
  }
  return "?";
}

LocalEncoder parse_local_encoder(std::string_view s) {
  for (auto e : {LocalEncoder::None, LocalEncoder::Conv, LocalEncoder::SepConv}) {
    if (local_encoder_name(e) == s) return e;
  }
  throw ConfigError("unknown local encoder \"" + std::string(s) + "\"");
}

HomoDpo::HomoDpo(std::string name, const HomoDpoConfig& cfg, std::mt19937_64& rng) : name_(name), cfg_(cfg) {
  if (cfg.k % 2 == 0) throw ConfigError(name_ + ": kernel size k must be odd, got " + std::to_string(cfg.k));
  if (cfg.n == 0 || cfg.c == 0) throw ConfigError(name_ + ": n and c must be positive");
  const bool depthwise = cfg.c == 1;
  const std::size_t gm = depthwise ? 1 : cfg.n;
  const std::size_t gc = depthwise ? cfg.n : cfg.c;
  const std::size_t center = cfg.k / 2;
  gens_.reserve(cfg.k);
  for (std::size_t l = 0; l < cfg.k; ++l) {
    gens_.emplace_back(name + ".tap" + std::to_string(l), cfg.generator, cfg.n, gm, gc, cfg.bias && l == center, rng);
  }
  if (cfg.local_encoder != LocalEncoder::None) {
    if (cfg.encoder_k % 2 == 0) throw ConfigError(name_ + ": encoder_k must be odd, got " + std::to_string(cfg.encoder_k));
  }
  if (cfg.local_encoder == LocalEncoder::Conv) {
    enc_kernel_ = glorot_param(name + ".enc_kernel", {cfg.encoder_k, cfg.n, cfg.n}, cfg.encoder_k * cfg.n, cfg.n, rng);
  } else if (cfg.local_encoder == LocalEncoder::SepConv) {
    enc_kernel_ = glorot_param(name + ".enc_kernel", {cfg.encoder_k, cfg.n, 1}, cfg.encoder_k, 1, rng);
    enc_point_ = glorot_param(name + ".enc_point", {cfg.n, cfg.n}, cfg.n, cfg.n, rng);
  }
}

void HomoDpo::collect(std::vector<Parameter*>& out) {
  for (auto& gen : gens_) gen.collect(out);
  if (cfg_.local_encoder != LocalEncoder::None) out.push_back(&enc_kernel_);
  if (cfg_.local_encoder == LocalEncoder::SepConv) out.push_back(&enc_point_);
}

Var HomoDpo::context(Graph& g, Var X) {
  Var h = X;
  if (cfg_.local_encoder == LocalEncoder::Conv) {
    h = conv1d(X, g.param(enc_kernel_), ConvMode::Full);
  } else if (cfg_.local_encoder == LocalEncoder::SepConv) {
    h = matmul(conv1d(X, g.param(enc_kernel_), ConvMode::Depthwise),
               g.param(enc_point_));
  }
  return mean(h, 1);
}

DynamicWeights HomoDpo::kernels(Graph& g, Var X) {
  require_shape(X, {0, 0, cfg_.n}, name_, "sequence X");
  if (X.dim(1) == 0) throw ConfigError(name_ + ": empty behavior sequence");
  const std::size_t B = X.dim(0);
  Var z = context(g, X);
  std::vector<Var> taps;
  Var bias;
  for (const auto& gen : gens_) {
    DynamicWeights w = gen.generate(g, z);
    // depthwise: [B, 1, n] -> [B, 1, n, 1]; full: [B, n, c] -> [B, 1, n, c]
    taps.push_back(cfg_.c == 1 ? reshape(w.weight, {B, 1, cfg_.n, 1}) : reshape(w.weight, {B, 1, cfg_.n, cfg_.c}));
    if (w.bias.valid()) bias = w.bias;
  }
  return {cfg_.k == 1 ? taps.front() : concat(taps, 1), bias};
}

Var HomoDpo::forward(Graph& g, Var X) {
  DynamicWeights w = kernels(g, X);
  Var y = conv1d(X, w.weight, cfg_.c == 1 ? ConvMode::Depthwise : ConvMode::Full);
  if (w.bias.valid()) y = add(y, reshape(w.bias, {X.dim(0), 1, out_dim()}));
  return y;
}

HeteroDpo::HeteroDpo(std::string name, const HeteroDpoConfig& cfg, std::mt19937_64& rng)
    : name_(name), cfg_(cfg), gen_(name + ".gen", cfg.generator, cfg.n, cfg.m, cfg.c, cfg.bias, rng) {}

Var HeteroDpo::forward(Graph& g, Var q, Var Z) const {
  require_shape(q, {0, cfg_.m}, name_, "query q");
  require_shape(Z, {q.dim(0), 0, cfg_.n}, name_, "behaviors Z");
  if (Z.dim(1) == 0) throw ConfigError(name_ + ": empty behavior sequence");
  const std::size_t B = q.dim(0);
  Var zbar = mean(Z, 1);
  return reshape(gen_.apply(g, reshape(q, {B, 1, cfg_.m}), gen_.encode(g, zbar)), {B, cfg_.c});
}

}  // namespace dpn
