#include "dpn/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dpn/error.hpp"
#include "dpn/rng.hpp"

namespace dpn {

std::string_view generator_kind_name(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::AffineFull: return "affine_full";
    case GeneratorKind::LowRankMoK: return "mok";
    case GeneratorKind::HyperDense: return "hyper_dense";
    case GeneratorKind::MatrixDecomp: return "matrix_decomp";
    case GeneratorKind::MatrixDecompResidual: return "matrix_decomp_residual";
    case GeneratorKind::SELayer: return "se";
  }
  return "?";
}

GeneratorKind parse_generator_kind(std::string_view s) {
  for (auto k : {GeneratorKind::AffineFull, GeneratorKind::LowRankMoK, GeneratorKind::HyperDense,
                 GeneratorKind::MatrixDecomp, GeneratorKind::MatrixDecompResidual, GeneratorKind::SELayer}) {
    if (generator_kind_name(k) == s) return k;
  }
  throw ConfigError("unknown generator kind \"" + std::string(s) + "\"");
}

std::string_view gate_name(Gate g) {
  switch (g) {
    case Gate::Identity: return "identity";
    case Gate::Sigmoid: return "sigmoid";
    case Gate::Softmax: return "softmax";
  }
  return "?";
}

Gate parse_gate(std::string_view s) {
  for (auto g : {Gate::Identity, Gate::Sigmoid, Gate::Softmax}) {
    if (gate_name(g) == s) return g;
  }
  throw ConfigError("unknown gate \"" + std::string(s) + "\"");
}

namespace {

Var apply_gate(Var a, Gate gate) {
  switch (gate) {
    case Gate::Identity: return a;
    case Gate::Sigmoid: return sigmoid(a);
    case Gate::Softmax: return softmax(clamp(a, -30.0, 30.0), -1);
  }
  return a;
}

Parameter make_param(const std::string& prefix, const std::string& role, Shape shape, std::size_t fan_in,
                     std::size_t fan_out, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  glorot_uniform(t, fan_in, fan_out, rng);
  return Parameter(prefix + "." + role, std::move(t));
}

Parameter zeros_param(const std::string& prefix, const std::string& role, Shape shape) {
  return Parameter(prefix + "." + role, Tensor(std::move(shape)));
}

}  // namespace

/// One (input group -> output group) block of a possibly multi-head generator.
struct Generator::Block {
  virtual ~Block() = default;
  virtual std::size_t code_dim() const = 0;
  virtual Var encode(Graph& g, Var z) = 0;
  virtual DynamicWeights decode(Graph& g, Var code) = 0;
  /// Default: materialize then contract.
  virtual Var apply(Graph& g, Var x, Var code) {
    DynamicWeights w = decode(g, code);
    Var y = matmul(x, w.weight);
    if (w.bias.valid()) y = add(y, reshape(w.bias, {w.bias.dim(0), 1, w.bias.dim(1)}));
    return y;
  }
  virtual void collect(std::vector<Parameter*>& out) = 0;
  Parameter* find(std::string_view role) {
    std::vector<Parameter*> ps;
    collect(ps);
    for (Parameter* p : ps) {
      const auto dot = p->name.rfind('.');
      if (p->name.substr(dot + 1) == role) return p;
    }
    return nullptr;
  }

  std::size_t n = 0, m = 0, c = 0;
  bool bias = true;
};

namespace {

// W(z) = reshape(z W_hat + b_hat), b(z) = z W_dot + b_dot. Without b_hat this is
// the hypernetwork form.
struct AffineBlock : Generator::Block {
  AffineBlock(const std::string& p, std::size_t n_, std::size_t m_, std::size_t c_, bool bias_, bool with_b_hat,
              std::mt19937_64& rng) {
    n = n_, m = m_, c = c_, bias = bias_;
    W_hat = make_param(p, "W_hat", {n, m * c}, n, m * c, rng);
    if (with_b_hat) b_hat = zeros_param(p, "b_hat", {m * c});
    has_b_hat = with_b_hat;
    if (bias) {
      W_dot = make_param(p, "W_dot", {n, c}, n, c, rng);
      b_dot = zeros_param(p, "b_dot", {c});
    }
  }
  std::size_t code_dim() const override { return n; }
  Var encode(Graph&, Var z) override { return z; }
  DynamicWeights decode(Graph& g, Var z) override {
    const std::size_t B = z.dim(0);
    Var w = matmul(z, g.param(W_hat));
    if (has_b_hat) w = add(w, g.param(b_hat));
    DynamicWeights out{reshape(w, {B, m, c}), Var()};
    if (bias) out.bias = add(matmul(z, g.param(W_dot)), g.param(b_dot));
    return out;
  }
  // z^T W_hat x via the outer product z (x) x, never forming per-instance W.
  Var apply(Graph& g, Var x, Var z) override {
    const std::size_t B = x.dim(0), rows = x.dim(1);
    Var zx = mul(reshape(z, {B, 1, n, 1}), reshape(x, {B, rows, 1, m}));
    Var y = matmul(reshape(zx, {B, rows, n * m}), reshape(g.param(W_hat), {n * m, c}));
    if (has_b_hat) y = add(y, matmul(x, reshape(g.param(b_hat), {m, c})));
    if (bias) y = add(y, reshape(add(matmul(z, g.param(W_dot)), g.param(b_dot)), {B, 1, c}));
    return y;
  }
  void collect(std::vector<Parameter*>& out) override {
    out.push_back(&W_hat);
    if (has_b_hat) out.push_back(&b_hat);
    if (bias) {
      out.push_back(&W_dot);
      out.push_back(&b_dot);
    }
  }
  Parameter W_hat, b_hat, W_dot, b_dot;
  bool has_b_hat = true;
};

// s = gate(z W1 + b1); W(z) = sum_k s_k E_k (+ W0), b(z) = sum_k s_k e_k (+ b0).
struct MoKBlock : Generator::Block {
  MoKBlock(const std::string& p, std::size_t n_, std::size_t m_, std::size_t c_, bool bias_, std::size_t l_, Gate gate_,
           bool static_kernel_, std::mt19937_64& rng)
      : l(l_), gate(gate_), static_kernel(static_kernel_) {
    n = n_, m = m_, c = c_, bias = bias_;
    W1 = make_param(p, "W1", {n, l}, n, l, rng);
    b1 = zeros_param(p, "b1", {l});
    experts = make_param(p, "experts", {l, m * c}, m, c, rng);
    if (bias) expert_bias = zeros_param(p, "expert_bias", {l, c});
    if (static_kernel) {
      W0 = make_param(p, "W0", {m, c}, m, c, rng);
      if (bias) b0 = zeros_param(p, "b0", {c});
    }
  }
  std::size_t code_dim() const override { return l; }
  Var encode(Graph& g, Var z) override { return apply_gate(add(matmul(z, g.param(W1)), g.param(b1)), gate); }
  DynamicWeights decode(Graph& g, Var s) override {
    const std::size_t B = s.dim(0);
    Var w = reshape(matmul(s, g.param(experts)), {B, m, c});
    if (static_kernel) w = add(w, g.param(W0));
    DynamicWeights out{w, Var()};
    if (bias) {
      out.bias = matmul(s, g.param(expert_bias));
      if (static_kernel) out.bias = add(out.bias, g.param(b0));
    }
    return out;
  }
  // Contract x with every expert first, then mix by the gate: memory scales
  // with rows * l * c instead of B * m * c.
  Var apply(Graph& g, Var x, Var s) override {
    const std::size_t B = x.dim(0), rows = x.dim(1);
    Var e = reshape(permute(reshape(g.param(experts), {l, m, c}), {1, 0, 2}), {m, l * c});
    Var xe = reshape(matmul(x, e), {B, rows, l, c});
    Var y = reshape(matmul(reshape(s, {B, 1, 1, l}), xe), {B, rows, c});
    if (static_kernel) y = add(y, matmul(x, g.param(W0)));
    if (bias) {
      Var b = matmul(s, g.param(expert_bias));
      if (static_kernel) b = add(b, g.param(b0));
      y = add(y, reshape(b, {B, 1, c}));
    }
    return y;
  }
  void collect(std::vector<Parameter*>& out) override {
    out.push_back(&W1);
    out.push_back(&b1);
    out.push_back(&experts);
    if (bias) out.push_back(&expert_bias);
    if (static_kernel) {
      out.push_back(&W0);
      if (bias) out.push_back(&b0);
    }
  }
  std::size_t l;
  Gate gate;
  bool static_kernel;
  Parameter W1, b1, experts, expert_bias, W0, b0;
};

// W(z) = P phi(z) Q (+ W0), phi(z) = reshape(gate(z W1 + b1) W2 + b2) in R^{r x r}.
struct DecompBlock : Generator::Block {
  DecompBlock(const std::string& p, std::size_t n_, std::size_t m_, std::size_t c_, bool bias_, std::size_t l_,
              std::size_t r_, Gate gate_, bool residual_, std::mt19937_64& rng)
      : l(l_), r(r_), gate(gate_), residual(residual_) {
    n = n_, m = m_, c = c_, bias = bias_;
    W1 = make_param(p, "W1", {n, l}, n, l, rng);
    b1 = zeros_param(p, "b1", {l});
    W2 = make_param(p, "W2", {l, r * r}, l, r * r, rng);
    // Core starts near the identity so P Q carries signal from the first step.
    Tensor eye({r * r});
    for (std::size_t i = 0; i < r; ++i) eye[i * r + i] = 1.0;
    b2 = Parameter(p + ".b2", std::move(eye));
    P = make_param(p, "P", {m, r}, m, r, rng);
    Q = make_param(p, "Q", {r, c}, r, c, rng);
    if (residual) W0 = make_param(p, "W0", {m, c}, m, c, rng);
    if (bias) b0 = zeros_param(p, "b0", {c});
  }
  std::size_t code_dim() const override { return r * r; }
  Var encode(Graph& g, Var z) override {
    return add(matmul(apply_gate(add(matmul(z, g.param(W1)), g.param(b1)), gate), g.param(W2)), g.param(b2));
  }
  DynamicWeights decode(Graph& g, Var code) override {
    const std::size_t B = code.dim(0);
    Var phi = reshape(code, {B, r, r});
    Var w = matmul(matmul(g.param(P), phi), g.param(Q));
    if (residual) w = add(w, g.param(W0));
    DynamicWeights out{w, Var()};
    if (bias) out.bias = broadcast_to(g.param(b0), {B, c});
    return out;
  }
  Var apply(Graph& g, Var x, Var code) override {
    const std::size_t B = x.dim(0);
    Var phi = reshape(code, {B, r, r});
    Var y = matmul(matmul(matmul(x, g.param(P)), phi), g.param(Q));
    if (residual) y = add(y, matmul(x, g.param(W0)));
    if (bias) y = add(y, g.param(b0));
    return y;
  }
  void collect(std::vector<Parameter*>& out) override {
    for (Parameter* p : {&W1, &b1, &W2, &b2, &P, &Q}) out.push_back(p);
    if (residual) out.push_back(&W0);
    if (bias) out.push_back(&b0);
  }
  std::size_t l, r;
  Gate gate;
  bool residual;
  Parameter W1, b1, W2, b2, P, Q, W0, b0;
};

// Squeeze-excitation over a static kernel: code = sigmoid(relu(z W1 + b1) W2 + b2),
// W = W0 * code[:mc], b = b0 * code[mc:].
struct SEBlock : Generator::Block {
  SEBlock(const std::string& p, std::size_t n_, std::size_t m_, std::size_t c_, bool bias_, double ratio,
          std::mt19937_64& rng) {
    n = n_, m = m_, c = c_, bias = bias_;
    hidden = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(n) * ratio)));
    const std::size_t out = m * c + (bias ? c : 0);
    W1 = make_param(p, "W1", {n, hidden}, n, hidden, rng);
    b1 = zeros_param(p, "b1", {hidden});
    W2 = make_param(p, "W2", {hidden, out}, hidden, out, rng);
    b2 = zeros_param(p, "b2", {out});
    W0 = make_param(p, "W0", {m, c}, m, c, rng);
    if (bias) b0 = zeros_param(p, "b0", {c});
  }
  std::size_t code_dim() const override { return m * c + (bias ? c : 0); }
  Var encode(Graph& g, Var z) override {
    return sigmoid(add(matmul(relu(add(matmul(z, g.param(W1)), g.param(b1))), g.param(W2)), g.param(b2)));
  }
  DynamicWeights decode(Graph& g, Var code) override {
    const std::size_t B = code.dim(0);
    Var w = mul(reshape(slice(code, 1, 0, m * c), {B, m, c}), g.param(W0));
    DynamicWeights out{w, Var()};
    if (bias) out.bias = mul(slice(code, 1, m * c, c), g.param(b0));
    return out;
  }
  void collect(std::vector<Parameter*>& out) override {
    for (Parameter* p : {&W1, &b1, &W2, &b2, &W0}) out.push_back(p);
    if (bias) out.push_back(&b0);
  }
  std::size_t hidden;
  Parameter W1, b1, W2, b2, W0, b0;
};

}  // namespace

Generator::Generator(std::string name, const GeneratorSpec& spec, std::size_t n, std::size_t m, std::size_t c,
                     bool bias, std::mt19937_64& rng)
    : name_(std::move(name)), spec_(spec), n_(n), m_(m), c_(c), bias_(bias) {
  if (n == 0 || m == 0 || c == 0) {
    throw ConfigError("generator '" + name_ + "': extents must be positive (n=" + std::to_string(n) +
                      ", m=" + std::to_string(m) + ", c=" + std::to_string(c) + ")");
  }
  const std::size_t h1 = spec.heads_in, h2 = spec.heads_out;
  if (h1 == 0 || h2 == 0 || m % h1 != 0 || c % h2 != 0) {
    throw ConfigError("generator '" + name_ + "': heads (" + std::to_string(h1) + "," + std::to_string(h2) +
                      ") must divide m=" + std::to_string(m) + " and c=" + std::to_string(c));
  }
  if (h1 != h2 && h1 != 1 && h2 != 1) {
    throw ConfigError("generator '" + name_ + "': heads must be equal or one of them 1, got (" + std::to_string(h1) +
                      "," + std::to_string(h2) + ")");
  }
  const bool multi = h1 > 1 || h2 > 1;
  const auto k = spec.kind;
  if (multi && (k == GeneratorKind::MatrixDecomp || k == GeneratorKind::MatrixDecompResidual ||
                k == GeneratorKind::SELayer)) {
    throw ConfigError("generator '" + name_ + "': kind " + std::string(generator_kind_name(k)) +
                      " supports a single head only");
  }
  if (k == GeneratorKind::LowRankMoK && spec.rank == 0) throw ConfigError("generator '" + name_ + "': rank l must be >= 1");
  if ((k == GeneratorKind::MatrixDecomp || k == GeneratorKind::MatrixDecompResidual) &&
      (spec.rank == 0 || spec.core_rank == 0)) {
    throw ConfigError("generator '" + name_ + "': matrix decomposition needs rank >= 1 and core_rank >= 1");
  }
  if (k == GeneratorKind::SELayer && !(spec.se_down_ratio > 0.0)) {
    throw ConfigError("generator '" + name_ + "': se_down_ratio must be positive");
  }
  const std::size_t nb = std::max(h1, h2);
  const std::size_t mb = m / h1, cb = c / h2;
  for (std::size_t i = 0; i < nb; ++i) {
    const std::string p = nb > 1 ? name_ + ".h" + std::to_string(i) : name_;
    switch (k) {
      case GeneratorKind::AffineFull:
        blocks_.push_back(std::make_unique<AffineBlock>(p, n, mb, cb, bias, true, rng));
        break;
      case GeneratorKind::HyperDense:
        blocks_.push_back(std::make_unique<AffineBlock>(p, n, mb, cb, bias, false, rng));
        break;
      case GeneratorKind::LowRankMoK:
        blocks_.push_back(std::make_unique<MoKBlock>(p, n, mb, cb, bias, spec.rank, spec.gate, spec.static_kernel, rng));
        break;
      case GeneratorKind::MatrixDecomp:
      case GeneratorKind::MatrixDecompResidual:
        blocks_.push_back(std::make_unique<DecompBlock>(p, n, mb, cb, bias, spec.rank, spec.core_rank, spec.gate,
                                                        k == GeneratorKind::MatrixDecompResidual, rng));
        break;
      case GeneratorKind::SELayer:
        blocks_.push_back(std::make_unique<SEBlock>(p, n, mb, cb, bias, spec.se_down_ratio, rng));
        break;
    }
  }
}

Generator::~Generator() = default;
Generator::Generator(Generator&&) noexcept = default;
Generator& Generator::operator=(Generator&&) noexcept = default;

std::size_t Generator::code_dim() const {
  std::size_t d = 0;
  for (const auto& b : blocks_) d += b->code_dim();
  return d;
}

void Generator::collect(std::vector<Parameter*>& out) {
  for (auto& b : blocks_) b->collect(out);
}

Parameter& Generator::param(std::string_view role, std::size_t block) {
  if (block >= blocks_.size()) throw UsageError("generator '" + name_ + "': no block " + std::to_string(block));
  Parameter* p = blocks_[block]->find(role);
  if (!p) throw UsageError("generator '" + name_ + "': no parameter '" + std::string(role) + "'");
  return *p;
}

Var Generator::encode(Graph& g, Var z) const {
  if (z.rank() != 2 || z.dim(1) != n_) {
    throw DimensionError("generator '" + name_ + "': context must be [B," + std::to_string(n_) + "], got " +
                         shape_str(z.shape()));
  }
  if (blocks_.size() == 1) return blocks_.front()->encode(g, z);
  std::vector<Var> codes;
  for (const auto& b : blocks_) codes.push_back(b->encode(g, z));
  return concat(codes, 1);
}

namespace {

std::vector<std::size_t> column_targets(std::size_t block, std::size_t width, std::size_t heads_out) {
  std::vector<std::size_t> t(width);
  std::iota(t.begin(), t.end(), heads_out > 1 ? block * width : 0);
  return t;
}

}  // namespace

DynamicWeights Generator::decode(Graph& g, Var code) const {
  if (code.rank() != 2 || code.dim(1) != code_dim()) {
    throw DimensionError("generator '" + name_ + "': code must be [B," + std::to_string(code_dim()) + "], got " +
                         shape_str(code.shape()));
  }
  if (blocks_.size() == 1) return blocks_.front()->decode(g, code);
  // Block i covers input rows of group i (or all rows when heads_in == 1) and
  // output columns of group i (or all columns when heads_out == 1).
  std::vector<Var> ws;
  Var bias;
  std::size_t off = 0;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = *blocks_[i];
    DynamicWeights w = blocks_[i]->decode(g, slice(code, 1, off, b.code_dim()));
    off += b.code_dim();
    const auto cols = column_targets(i, b.c, spec_.heads_out);
    ws.push_back(spec_.heads_out > 1 ? embed_columns(w.weight, cols, c_) : w.weight);
    if (w.bias.valid()) {
      Var bb = spec_.heads_out > 1 ? embed_columns(w.bias, cols, c_) : w.bias;
      bias = bias.valid() ? add(bias, bb) : bb;
    }
  }
  Var weight;
  if (spec_.heads_in > 1) {
    weight = concat(ws, 1);
  } else {
    weight = ws.front();
    for (std::size_t i = 1; i < ws.size(); ++i) weight = add(weight, ws[i]);
  }
  return {weight, bias};
}

Var Generator::apply(Graph& g, Var x, Var code) const {
  if (x.rank() != 3 || x.dim(2) != m_ || code.rank() != 2 || code.dim(0) != x.dim(0) || code.dim(1) != code_dim()) {
    throw DimensionError("generator '" + name_ + "': apply expects x [B,rows," + std::to_string(m_) + "] and code [B," +
                         std::to_string(code_dim()) + "], got " + shape_str(x.shape()) + " and " +
                         shape_str(code.shape()));
  }
  if (blocks_.size() == 1) return blocks_.front()->apply(g, x, code);
  Var y;
  std::size_t off = 0;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = *blocks_[i];
    Var xi = spec_.heads_in > 1 ? slice(x, 2, i * b.m, b.m) : x;
    Var yi = b.apply(g, xi, slice(code, 1, off, b.code_dim()));
    off += b.code_dim();
    if (spec_.heads_out > 1) yi = embed_columns(yi, column_targets(i, b.c, spec_.heads_out), c_);
    y = y.valid() ? add(y, yi) : yi;
  }
  return y;
}

std::size_t generator_param_count(const GeneratorSpec& spec, std::size_t n, std::size_t m, std::size_t c, bool bias) {
  const std::size_t blocks = std::max(spec.heads_in, spec.heads_out);
  m /= spec.heads_in;
  c /= spec.heads_out;
  const std::size_t mc = m * c, cb = bias ? c : 0;
  std::size_t per = 0;
  switch (spec.kind) {
    case GeneratorKind::AffineFull: per = n * mc + mc + (bias ? n * c + c : 0); break;
    case GeneratorKind::HyperDense: per = n * mc + (bias ? n * c + c : 0); break;
    case GeneratorKind::LowRankMoK: {
      const std::size_t l = spec.rank;
      per = n * l + l + l * mc + l * cb + (spec.static_kernel ? mc + cb : 0);
      break;
    }
    case GeneratorKind::MatrixDecomp:
    case GeneratorKind::MatrixDecompResidual: {
      const std::size_t l = spec.rank, r = spec.core_rank;
      per = n * l + l + l * r * r + r * r + m * r + r * c + cb;
      if (spec.kind == GeneratorKind::MatrixDecompResidual) per += mc;
      break;
    }
    case GeneratorKind::SELayer: {
      const std::size_t h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(n) * spec.se_down_ratio)));
      per = n * h + h + (h + 1) * (mc + cb) + mc + cb;
      break;
    }
  }
  return blocks * per;
}

}  // namespace dpn
