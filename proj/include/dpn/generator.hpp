#pragma once

#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dpn/module.hpp"
#include "dpn/ops.hpp"

namespace dpn {

enum class GeneratorKind { AffineFull, LowRankMoK, HyperDense, MatrixDecomp, MatrixDecompResidual, SELayer };
enum class Gate { Identity, Sigmoid, Softmax };

std::string_view generator_kind_name(GeneratorKind k);
GeneratorKind parse_generator_kind(std::string_view s);
std::string_view gate_name(Gate g);
Gate parse_gate(std::string_view s);

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::LowRankMoK;
  /// Expert count for LowRankMoK; hidden width of the core generator for MatrixDecomp.
  std::size_t rank = 4;
  Gate gate = Gate::Softmax;
  std::size_t heads_in = 1;
  std::size_t heads_out = 1;
  /// r of the r x r core in MatrixDecomp.
  std::size_t core_rank = 32;
  double se_down_ratio = 0.25;
  /// LowRankMoK: add a static kernel (the b2 term) next to the experts.
  bool static_kernel = false;
};

/// Closed-form parameter count of a generator with these extents.
std::size_t generator_param_count(const GeneratorSpec& spec, std::size_t n, std::size_t m, std::size_t c, bool bias);

/// Per-instance weights: weight [B, m, c], bias [B, c] (invalid when absent).
struct DynamicWeights {
  Var weight;
  Var bias;
};

/// g(z) -> (W(z), b(z)), factored as an encoder z -> code followed by an affine
/// decoder code -> (W, b). Since the decoder is affine, averaging codes and
/// averaging generated weights agree exactly, which is what context pooling uses.
class Generator : public Module {
 public:
  Generator(std::string name, const GeneratorSpec& spec, std::size_t n, std::size_t m, std::size_t c, bool bias,
            std::mt19937_64& rng);
  ~Generator() override;
  Generator(Generator&&) noexcept;
  Generator& operator=(Generator&&) noexcept;

  /// z [B, n] -> code [B, code_dim]
  Var encode(Graph& g, Var z) const;
  DynamicWeights decode(Graph& g, Var code) const;
  DynamicWeights generate(Graph& g, Var z) const { return decode(g, encode(g, z)); }
  /// x [B, rows, m], code [B, code_dim] -> [B, rows, c]; every row of an instance
  /// shares its generated weights.
  Var apply(Graph& g, Var x, Var code) const;

  std::size_t code_dim() const;
  std::size_t n() const { return n_; }
  std::size_t m() const { return m_; }
  std::size_t c() const { return c_; }
  bool has_bias() const { return bias_; }
  const GeneratorSpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }

  void collect(std::vector<Parameter*>& out) override;

  struct Block;

  /// Direct parameter access for oracle tests; roles are kind-specific
  /// ("W_hat", "b_hat", "W_dot", "b_dot", "W1", "b1", "experts", ...).
  Parameter& param(std::string_view role, std::size_t block = 0);
  std::size_t blocks() const { return blocks_.size(); }

 private:
  std::string name_;
  GeneratorSpec spec_;
  std::size_t n_, m_, c_;
  bool bias_;
  std::vector<std::unique_ptr<Block>> blocks_;
};

}  // namespace dpn
