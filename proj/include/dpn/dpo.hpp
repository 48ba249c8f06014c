#pragma once

#include <optional>
#include <random>
#include <string>
#include <string_view>

#include "dpn/generator.hpp"

namespace dpn {

struct FeatureDpoConfig {
  std::size_t m = 0;  ///< input dim
  std::size_t n = 0;  ///< context dim
  std::size_t c = 0;  ///< output dim
  GeneratorSpec generator;
  bool bias = true;
};

/// y = W(z)^T x + b(z)
class FeatureDpo : public Module {
 public:
  FeatureDpo(std::string name, const FeatureDpoConfig& cfg, std::mt19937_64& rng);

  /// x [B, m], z [B, n] -> [B, c]
  Var forward(Graph& g, Var x, Var z) const;

  const FeatureDpoConfig& config() const { return cfg_; }
  Generator& generator() { return gen_; }
  void collect(std::vector<Parameter*>& out) override { gen_.collect(out); }

 private:
  std::string name_;
  FeatureDpoConfig cfg_;
  Generator gen_;
};

enum class Aggregation { Summation, Self, Attention, Concat };
std::string_view aggregation_name(Aggregation a);
Aggregation parse_aggregation(std::string_view s);

struct FieldDpoConfig {
  std::size_t t1 = 0;  ///< input fields
  std::size_t t2 = 0;  ///< context fields
  std::size_t n = 0;   ///< per-field input and context dim
  std::size_t c = 0;   ///< per-field output dim
  Aggregation aggregation = Aggregation::Summation;
  GeneratorSpec generator;
  bool bias = true;
  /// Adds the static two-sided path W_f X W_l.
  bool implicit_branch = false;
  /// Summation only: field i pools over the other t2 - 1 context fields.
  bool exclude_self = false;
};

/// Per-field dynamic map whose weights are generated from pooled context fields.
class FieldDpo : public Module {
 public:
  FieldDpo(std::string name, const FieldDpoConfig& cfg, std::mt19937_64& rng);

  /// X [B, t1, n], Z [B, t2, n] -> [B, t1, c]. Self mode ignores Z.
  Var forward(Graph& g, Var X, Var Z);

  const FieldDpoConfig& config() const { return cfg_; }
  Generator& generator() { return gen_; }
  Parameter& attention_weight() { return att_w_; }
  Parameter& attention_bias() { return att_b_; }
  Parameter& field_mix() { return w_f_; }
  Parameter& field_proj() { return w_l_; }
  void collect(std::vector<Parameter*>& out) override;

 private:
  std::string name_;
  FieldDpoConfig cfg_;
  Generator gen_;
  Parameter att_w_, att_b_;  // per-context-field score h(z_j) = z_j . w_j + b_j
  Parameter w_f_, w_l_;      // implicit branch
};

enum class LocalEncoder { None, Conv, SepConv };
std::string_view local_encoder_name(LocalEncoder e);
LocalEncoder parse_local_encoder(std::string_view s);

struct HomoDpoConfig {
  std::size_t k = 3;
  std::size_t n = 0;
  /// 1 selects depthwise kernels (output n); otherwise full kernels with c outputs.
  std::size_t c = 1;
  LocalEncoder local_encoder = LocalEncoder::None;
  std::size_t encoder_k = 3;
  GeneratorSpec generator;
  bool bias = false;
};

/// Dynamic 1-D convolution over a behavior sequence; one generator per tap.
class HomoDpo : public Module {
 public:
  HomoDpo(std::string name, const HomoDpoConfig& cfg, std::mt19937_64& rng);

  /// X [B, t, n] -> [B, t, c == 1 ? n : c]
  Var forward(Graph& g, Var X);
  /// Pooled context used for generation, [B, n].
  Var context(Graph& g, Var X);
  /// Generated kernels [B, k, n, c] and optional bias [B, out].
  DynamicWeights kernels(Graph& g, Var X);

  std::size_t out_dim() const { return cfg_.c == 1 ? cfg_.n : cfg_.c; }
  const HomoDpoConfig& config() const { return cfg_; }
  Generator& generator(std::size_t tap) { return gens_.at(tap); }
  void collect(std::vector<Parameter*>& out) override;

 private:
  std::string name_;
  HomoDpoConfig cfg_;
  std::vector<Generator> gens_;
  Parameter enc_kernel_, enc_point_;
};

struct HeteroDpoConfig {
  std::size_t m = 0;  ///< query dim
  std::size_t n = 0;  ///< behavior dim
  std::size_t c = 0;
  GeneratorSpec generator;
  bool bias = true;
};

/// y = W(mean_j z_j)^T q + b(mean_j z_j)
class HeteroDpo : public Module {
 public:
  HeteroDpo(std::string name, const HeteroDpoConfig& cfg, std::mt19937_64& rng);

  /// q [B, m], Z [B, t, n] -> [B, c]
  Var forward(Graph& g, Var q, Var Z) const;

  const HeteroDpoConfig& config() const { return cfg_; }
  Generator& generator() { return gen_; }
  void collect(std::vector<Parameter*>& out) override { gen_.collect(out); }

 private:
  std::string name_;
  HeteroDpoConfig cfg_;
  Generator gen_;
};

}  // namespace dpn
