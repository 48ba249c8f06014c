#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dpn/baselines.hpp"
#include "dpn/data.hpp"
#include "dpn/dpo.hpp"

namespace dpn {

enum class Family { Mlp, FeatureDpn, FieldDpn, Hybrid, Sdpn };
std::string_view family_name(Family f);
Family parse_family(std::string_view s);

enum class LayerKind { Dense, Feature, Field };
std::string_view layer_kind_name(LayerKind k);
LayerKind parse_layer_kind(std::string_view s);

/// Where a layer draws its context from.
struct ContextRef {
  enum Kind { X0, Z0, XPrev, FieldInput, FieldContext } kind = X0;
  std::string field;  ///< FieldInput / FieldContext
  static ContextRef parse(std::string_view s);
  std::string str() const;
};

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::size_t units = 0;
  ContextRef context;
  /// Block gradients through the context path.
  bool stop_grad = false;
  GeneratorSpec generator;
  Aggregation aggregation = Aggregation::Summation;
  bool implicit_branch = false;
  bool batchnorm = true;
  Activation activation = Activation::Relu;
  bool bias = true;
};

enum class SeqEncoder { Homo, Mhsa, Both };
enum class SeqDecoder { Hetero, Mhsa, Both };
std::string_view seq_encoder_name(SeqEncoder e);
std::string_view seq_decoder_name(SeqDecoder d);
SeqEncoder parse_seq_encoder(std::string_view s);
SeqDecoder parse_seq_decoder(std::string_view s);

struct SequenceSpec {
  /// Schema field whose table embeds both the target and the history.
  std::string item_field = "item";
  SeqEncoder encoder = SeqEncoder::Homo;
  SeqDecoder decoder = SeqDecoder::Hetero;
  std::size_t kernel = 3;
  std::size_t homo_c = 1;
  LocalEncoder local_encoder = LocalEncoder::None;
  GeneratorSpec generator;
  std::size_t heads = 1;
};

struct ModelSpec {
  FieldSchema schema;
  Family family = Family::Mlp;
  std::size_t embed_dim = 10;
  std::vector<LayerSpec> layers;
  SequenceSpec sequence;  ///< SDPN only
};

/// Embedding tables, a stack of dense / feature-DPO / field-DPO layers and a
/// linear classifier producing one logit per row.
class Model : public Module {
 public:
  Model(const ModelSpec& spec, std::mt19937_64& rng);

  /// Logits [B].
  Var forward(Graph& g, const Batch& batch, bool training);

  const ModelSpec& spec() const { return spec_; }
  /// Parameters outside the embedding tables (the usual "model size").
  std::size_t dense_param_count();
  std::size_t embedding_param_count();
  /// Sum of the per-layer analytic formulas; must equal dense_param_count().
  std::size_t analytic_param_count() const;

  void collect(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out) override;

 private:
  struct Layer {
    LayerSpec spec;
    std::size_t in_width = 0;   ///< flat width (feature/dense) or per-field width (field)
    std::size_t ctx_width = 0;  ///< flat width or per-field width of the context
    std::size_t ctx_fields = 0;
    std::unique_ptr<Linear> dense;
    std::unique_ptr<FeatureDpo> feature;
    std::unique_ptr<FieldDpo> field;
    std::unique_ptr<BatchNorm> norm;
    std::string name;
  };

  void build_layers(std::mt19937_64& rng);
  void build_sequence(std::mt19937_64& rng);
  EmbeddingTable& context_table(const std::string& field, std::mt19937_64& rng);
  Var context_var(const Layer& L, const std::vector<Var>& inputs, const std::vector<Var>& contexts, Var prev,
                  bool field_mode);

  ModelSpec spec_;
  std::vector<std::unique_ptr<EmbeddingTable>> tables_;
  std::vector<std::unique_ptr<EmbeddingTable>> ctx_tables_;  // aligned with the schema, null when unused
  std::vector<Layer> layers_;
  std::unique_ptr<Linear> classifier_;
  // SDPN
  std::unique_ptr<HomoDpo> homo_;
  std::unique_ptr<Mhsa> enc_att_, dec_att_;
  std::unique_ptr<HeteroDpo> hetero_;
  std::size_t item_field_ = 0;
  std::size_t head_in_ = 0;
};

}  // namespace dpn
