#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dpn/module.hpp"
#include "dpn/ops.hpp"

namespace dpn {

/// y = x W + b over the last axis.
class Linear : public Module {
 public:
  Linear(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng, bool bias = true);

  Var forward(Graph& g, Var x);
  std::size_t in() const { return weight.value.dim(0); }
  std::size_t out() const { return weight.value.dim(1); }
  void collect(std::vector<Parameter*>& out) override;

  Parameter weight;  ///< [in, out]
  Parameter bias;    ///< [out], empty when disabled
  bool has_bias;
};

class BatchNorm : public Module {
 public:
  BatchNorm(std::string name, std::size_t dim);

  /// x [b, d], or [b, t, d] normalized over the flattened leading axes.
  Var forward(Graph& g, Var x, bool training);
  void collect(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out) override;

  Parameter gamma, beta;
  BatchNormState state;

 private:
  std::string name_;
};

enum class Activation { None, Relu, Sigmoid, Tanh };

struct MlpLayer {
  std::size_t units;
  Activation activation = Activation::Relu;
  bool batchnorm = false;
};

/// Stack of affine -> (BN) -> activation layers.
class Mlp : public Module {
 public:
  Mlp(std::string name, std::size_t in, const std::vector<MlpLayer>& layers, std::mt19937_64& rng);

  Var forward(Graph& g, Var x, bool training);
  std::size_t out_dim() const { return out_; }
  Linear& layer(std::size_t i) { return *linears_.at(i); }
  void collect(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out) override;

 private:
  std::vector<MlpLayer> spec_;
  std::vector<std::unique_ptr<Linear>> linears_;
  std::vector<std::unique_ptr<BatchNorm>> norms_;
  std::size_t out_;
};

Var activate(Var x, Activation a);

/// x_{i+1} = x0 (x_i . w) + b + x_i, rows independent: x0, xi [B, d], w, b [d].
Var cross_layer(Var x0, Var xi, Var w, Var b);
/// Plain-loop reference of the same recurrence on one instance.
std::vector<double> cross_layer_ref(const std::vector<double>& x0, const std::vector<double>& xi,
                                    const std::vector<double>& w, const std::vector<double>& b);

/// sum_{i<j} x_i . x_j over the rows of X [t, e]; t >= 2.
double fm_pairwise(const Tensor& X);
/// Per-row form y_i = (1/(t-1)) sum_{j != i} x_i . x_j, so sum_i y_i = 2 fm / (t-1).
std::vector<double> fm_pairwise_normalized(const Tensor& X);

/// W_f X W_l with X [B, t, n], W_f [t, t], W_l [n, c] -> [B, t, c].
Var field_dnn(Var X, Var W_f, Var W_l);

struct MhsaConfig {
  std::size_t d_model = 0;
  std::size_t heads = 1;
};

/// Scaled dot-product multi-head attention, no positional terms.
class Mhsa : public Module {
 public:
  Mhsa(std::string name, const MhsaConfig& cfg, std::mt19937_64& rng);

  /// K, V [B, t, d], Q [B, s, d] -> [B, s, d]; `attention` receives the
  /// weights [B, h, s, t] when given.
  Var forward(Graph& g, Var K, Var V, Var Q, Var* attention = nullptr);
  void collect(std::vector<Parameter*>& out) override;

  Parameter Wq, Wk, Wv, Wo;  ///< each [d, d]; head i uses columns [i*dk, (i+1)*dk)

 private:
  MhsaConfig cfg_;
};

}  // namespace dpn
