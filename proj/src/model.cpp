#include "dpn/model.hpp"

#include "dpn/error.hpp"

namespace dpn {

std::string_view family_name(Family f) {
  switch (f) {
    case Family::Mlp: return "mlp";
    case Family::FeatureDpn: return "feature_dpn";
    case Family::FieldDpn: return "field_dpn";
    case Family::Hybrid: return "hybrid";
    case Family::Sdpn: return "sdpn";
  }
  return "?";
}

Family parse_family(std::string_view s) {
  for (auto f : {Family::Mlp, Family::FeatureDpn, Family::FieldDpn, Family::Hybrid, Family::Sdpn})
    if (family_name(f) == s) return f;
  throw ConfigError("unknown model family \"" + std::string(s) + "\"");
}

std::string_view layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Feature: return "feature_dpo";
    case LayerKind::Field: return "field_dpo";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view s) {
  for (auto k : {LayerKind::Dense, LayerKind::Feature, LayerKind::Field})
    if (layer_kind_name(k) == s) return k;
  throw ConfigError("unknown layer kind \"" + std::string(s) + "\"");
}

std::string_view seq_encoder_name(SeqEncoder e) {
  switch (e) {
    case SeqEncoder::Homo: return "homo";
    case SeqEncoder::Mhsa: return "mhsa";
    case SeqEncoder::Both: return "both";
  }
  return "?";
}

std::string_view seq_decoder_name(SeqDecoder d) {
  switch (d) {
    case SeqDecoder::Hetero: return "hetero";
    case SeqDecoder::Mhsa: return "mhsa";
    case SeqDecoder::Both: return "both";
  }
  return "?";
}

SeqEncoder parse_seq_encoder(std::string_view s) {
  for (auto e : {SeqEncoder::Homo, SeqEncoder::Mhsa, SeqEncoder::Both})
    if (seq_encoder_name(e) == s) return e;
  throw ConfigError("unknown sequence encoder \"" + std::string(s) + "\"");
}

SeqDecoder parse_seq_decoder(std::string_view s) {
  for (auto d : {SeqDecoder::Hetero, SeqDecoder::Mhsa, SeqDecoder::Both})
    if (seq_decoder_name(d) == s) return d;
  throw ConfigError("unknown sequence decoder \"" + std::string(s) + "\"");
}

ContextRef ContextRef::parse(std::string_view s) {
  ContextRef r;
  if (s == "x0") {
    r.kind = X0;
  } else if (s == "z0") {
    r.kind = Z0;
  } else if (s == "x_prev") {
    r.kind = XPrev;
  } else if (s.size() > 2 && (s.substr(0, 2) == "x:" || s.substr(0, 2) == "z:")) {
    r.kind = s[0] == 'x' ? FieldInput : FieldContext;
    r.field = std::string(s.substr(2));
  } else {
    throw ConfigError("unknown context \"" + std::string(s) + "\" (expected x0, z0, x_prev, x:<field> or z:<field>)");
  }
  return r;
}

std::string ContextRef::str() const {
  switch (kind) {
    case X0: return "x0";
    case Z0: return "z0";
    case XPrev: return "x_prev";
    case FieldInput: return "x:" + field;
    case FieldContext: return "z:" + field;
  }
  return "?";
}

Model::Model(const ModelSpec& spec, std::mt19937_64& rng) : spec_(spec) {
  const auto& schema = spec_.schema;
  if (schema.size() == 0) throw ConfigError("model: schema has no fields");
  if (spec_.embed_dim == 0) throw ConfigError("model: embed_dim must be positive");
  for (const auto& f : schema.fields()) {
    tables_.push_back(std::make_unique<EmbeddingTable>(f.name, f.vocab, spec_.embed_dim, rng));
  }
  ctx_tables_.resize(schema.size());
  if (spec_.family == Family::Sdpn) build_sequence(rng);
  build_layers(rng);
}

EmbeddingTable& Model::context_table(const std::string& field, std::mt19937_64& rng) {
  const std::size_t f = spec_.schema.index_of(field);
  if (!ctx_tables_[f]) {
    ctx_tables_[f] = std::make_unique<EmbeddingTable>(field, spec_.schema[f].vocab, spec_.embed_dim, rng, "ctx." + field);
  }
  return *ctx_tables_[f];
}

void Model::build_sequence(std::mt19937_64& rng) {
  const auto& sq = spec_.sequence;
  const std::size_t e = spec_.embed_dim;
  item_field_ = spec_.schema.index_of(sq.item_field);
  if (sq.encoder != SeqEncoder::Mhsa) {
    if (sq.homo_c != 1 && sq.homo_c != e) {
      throw ConfigError("sdpn: homo_c must be 1 (depthwise) or embed_dim " + std::to_string(e) + ", got " +
                        std::to_string(sq.homo_c));
    }
    HomoDpoConfig hc;
    hc.k = sq.kernel;
    hc.n = e;
    hc.c = sq.homo_c;
    hc.local_encoder = sq.local_encoder;
    hc.generator = sq.generator;
    homo_ = std::make_unique<HomoDpo>("enc.homo", hc, rng);
  }
  if (sq.encoder != SeqEncoder::Homo) enc_att_ = std::make_unique<Mhsa>("enc.mhsa", MhsaConfig{e, sq.heads}, rng);
  if (sq.decoder != SeqDecoder::Mhsa) {
    hetero_ = std::make_unique<HeteroDpo>("dec.hetero", HeteroDpoConfig{e, e, e, sq.generator, true}, rng);
  }
  if (sq.decoder != SeqDecoder::Hetero) dec_att_ = std::make_unique<Mhsa>("dec.mhsa", MhsaConfig{e, sq.heads}, rng);
  head_in_ = spec_.schema.size() * e + e;
}

void Model::build_layers(std::mt19937_64& rng) {
  const std::size_t F = spec_.schema.size(), e = spec_.embed_dim;
  bool field_mode = true;  // still in [B, F, w] layout
  std::size_t width = e;   // per-field width while field_mode, flat width after
  if (spec_.family == Family::Sdpn) {
    field_mode = false;
    width = head_in_;
  }
  std::size_t idx = 0;
  for (const auto& ls : spec_.layers) {
    ++idx;
    Layer L;
    L.spec = ls;
    L.name = (ls.kind == LayerKind::Field ? "field" : "fc") + std::to_string(idx);
    if (ls.units == 0) throw ConfigError("layer " + L.name + ": units must be positive");
    const bool allowed = [&] {
      switch (spec_.family) {
        case Family::Mlp:
        case Family::Sdpn: return ls.kind == LayerKind::Dense;
        case Family::FeatureDpn: return ls.kind != LayerKind::Field;
        case Family::FieldDpn: return ls.kind == LayerKind::Field;
        case Family::Hybrid: return ls.kind != LayerKind::Field || field_mode;
      }
      return false;
    }();
    if (!allowed) {
      throw ConfigError("layer " + L.name + ": kind " + std::string(layer_kind_name(ls.kind)) + " not allowed here in family " +
                        std::string(family_name(spec_.family)));
    }
    if (ls.kind != LayerKind::Field && field_mode) {
      field_mode = false;
      width *= F;
    }
    L.in_width = width;
    const auto& ctx = ls.context;
    if (ls.kind != LayerKind::Dense) {
      if (ctx.kind == ContextRef::FieldInput || ctx.kind == ContextRef::FieldContext) {
        if (!spec_.schema.contains(ctx.field)) {
          throw ConfigError("layer " + L.name + ": context field '" + ctx.field + "' not in schema");
        }
      }
      if (ctx.kind == ContextRef::Z0) {
        for (const auto& f : spec_.schema.fields()) context_table(f.name, rng);
      } else if (ctx.kind == ContextRef::FieldContext) {
        context_table(ctx.field, rng);
      }
    }
    switch (ls.kind) {
      case LayerKind::Dense:
        L.dense = std::make_unique<Linear>(L.name, width, ls.units, rng, ls.bias);
        break;
      case LayerKind::Feature: {
        switch (ctx.kind) {
          case ContextRef::X0:
          case ContextRef::Z0: L.ctx_width = F * e; break;
          case ContextRef::XPrev: L.ctx_width = width; break;
          default: L.ctx_width = e;
        }
        L.feature = std::make_unique<FeatureDpo>(L.name, FeatureDpoConfig{width, L.ctx_width, ls.units, ls.generator, ls.bias}, rng);
        break;
      }
      case LayerKind::Field: {
        switch (ctx.kind) {
          case ContextRef::X0:
          case ContextRef::Z0:
            L.ctx_fields = F;
            L.ctx_width = e;
            break;
          case ContextRef::XPrev:
            L.ctx_fields = F;
            L.ctx_width = width;
            break;
          default:
            L.ctx_fields = 1;
            L.ctx_width = e;
        }
        if (ls.aggregation == Aggregation::Self) {
          L.ctx_fields = F;
          L.ctx_width = width;
        }
        if (L.ctx_width != width) {
          throw ConfigError("layer " + L.name + ": context " + ctx.str() + " has per-field width " +
                            std::to_string(L.ctx_width) + " but the layer input has " + std::to_string(width) +
                            " (use x_prev)");
        }
        FieldDpoConfig fc;
        fc.t1 = F;
        fc.t2 = L.ctx_fields;
        fc.n = width;
        fc.c = ls.units;
        fc.aggregation = ls.aggregation;
        fc.generator = ls.generator;
        fc.bias = ls.bias;
        fc.implicit_branch = ls.implicit_branch;
        L.field = std::make_unique<FieldDpo>(L.name, fc, rng);
        break;
      }
    }
    if (ls.batchnorm) L.norm = std::make_unique<BatchNorm>(L.name + ".bn", ls.units);
    width = ls.units;
    layers_.push_back(std::move(L));
  }
  if (field_mode) width *= F;
  classifier_ = std::make_unique<Linear>("classifier", width, 1, rng);
}

Var Model::context_var(const Layer& L, const std::vector<Var>& inputs, const std::vector<Var>& contexts,
                       Var prev, bool field_mode) {
  const auto& ctx = L.spec.context;
  Var z;
  switch (ctx.kind) {
    case ContextRef::X0: z = field_mode ? stack_fields(inputs) : concat_fields(inputs); break;
    case ContextRef::Z0: z = field_mode ? stack_fields(contexts) : concat_fields(contexts); break;
    case ContextRef::XPrev: z = prev; break;
    case ContextRef::FieldInput:
    case ContextRef::FieldContext: {
      const std::size_t f = spec_.schema.index_of(ctx.field);
      z = ctx.kind == ContextRef::FieldInput ? inputs[f] : contexts[f];
      if (field_mode) z = reshape(z, {z.dim(0), 1, z.dim(1)});
      break;
    }
  }
  return L.spec.stop_grad ? stop_gradient(z) : z;
}

Var Model::forward(Graph& g, const Batch& batch, bool training) {
  const std::size_t F = spec_.schema.size(), B = batch.size;
  if (batch.fields.size() != F) {
    throw DimensionError("model: batch has " + std::to_string(batch.fields.size()) + " fields, schema has " + std::to_string(F));
  }
  std::vector<Var> inputs(F), contexts(F);
  for (std::size_t f = 0; f < F; ++f) {
    inputs[f] = tables_[f]->lookup(g, batch.fields[f]);
    if (ctx_tables_[f]) contexts[f] = ctx_tables_[f]->lookup(g, batch.fields[f]);
  }
  Var h;
  bool field_mode = false;
  if (spec_.family == Family::Sdpn) {
    const std::size_t T = batch.seq_len, e = spec_.embed_dim;
    if (T == 0) throw DataError("sdpn: batch carries no behavior sequence");
    Var H = reshape(gather_rows(g, tables_[item_field_]->weights, batch.history, spec_.sequence.item_field), {B, T, e});
    Var enc = H;
    if (homo_) enc = add(enc, homo_->forward(g, H));
    if (enc_att_) enc = add(enc, enc_att_->forward(g, H, H, H));
    Var q = inputs[item_field_];
    Var interest;
    if (hetero_) interest = hetero_->forward(g, q, enc);
    if (dec_att_) {
      Var a = reshape(dec_att_->forward(g, enc, enc, reshape(q, {B, 1, e})), {B, e});
      interest = interest.valid() ? add(interest, a) : a;
    }
    h = concat({concat_fields(inputs), interest}, 1);
  } else {
    const bool has_field = !layers_.empty() && layers_.front().spec.kind == LayerKind::Field;
    field_mode = has_field;
    h = field_mode ? stack_fields(inputs) : concat_fields(inputs);
  }
  for (const auto& L : layers_) {
    if (L.spec.kind != LayerKind::Field && field_mode) {
      h = reshape(h, {B, h.dim(1) * h.dim(2)});
      field_mode = false;
    }
    switch (L.spec.kind) {
      case LayerKind::Dense: h = L.dense->forward(g, h); break;
      case LayerKind::Feature: h = L.feature->forward(g, h, context_var(L, inputs, contexts, h, false)); break;
      case LayerKind::Field: h = L.field->forward(g, h, context_var(L, inputs, contexts, h, true)); break;
    }
    if (L.norm) h = L.norm->forward(g, h, training);
    h = activate(h, L.spec.activation);
  }
  if (field_mode) h = reshape(h, {B, h.dim(1) * h.dim(2)});
  return reshape(classifier_->forward(g, h), {B});
}

void Model::collect(std::vector<Parameter*>& out) {
  for (auto& t : tables_) t->collect(out);
  for (auto& t : ctx_tables_)
    if (t) t->collect(out);
  if (homo_) homo_->collect(out);
  if (enc_att_) enc_att_->collect(out);
  if (hetero_) hetero_->collect(out);
  if (dec_att_) dec_att_->collect(out);
  for (auto& L : layers_) {
    if (L.dense) L.dense->collect(out);
    if (L.feature) L.feature->collect(out);
    if (L.field) L.field->collect(out);
    if (L.norm) L.norm->collect(out);
  }
  classifier_->collect(out);
}

void Model::collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out) {
  for (auto& L : layers_)
    if (L.norm) L.norm->collect_buffers(out);
}

std::size_t Model::embedding_param_count() {
  std::size_t n = 0;
  for (auto& t : tables_) n += t->param_count();
  for (auto& t : ctx_tables_)
    if (t) n += t->param_count();
  return n;
}

std::size_t Model::dense_param_count() { return param_count() - embedding_param_count(); }

std::size_t Model::analytic_param_count() const {
  const std::size_t e = spec_.embed_dim, F = spec_.schema.size();
  std::size_t total = 0;
  if (homo_) {
    const auto& hc = homo_->config();
    const bool dw = hc.c == 1;
    for (std::size_t l = 0; l < hc.k; ++l) {
      total += generator_param_count(hc.generator, hc.n, dw ? 1 : hc.n, dw ? hc.n : hc.c, hc.bias && l == hc.k / 2);
    }
    if (hc.local_encoder == LocalEncoder::Conv) total += hc.encoder_k * hc.n * hc.n;
    if (hc.local_encoder == LocalEncoder::SepConv) total += hc.encoder_k * hc.n + hc.n * hc.n;
  }
  if (enc_att_) total += 4 * e * e;
  if (dec_att_) total += 4 * e * e;
  if (hetero_) total += generator_param_count(spec_.sequence.generator, e, e, e, true);
  std::size_t width = 0;
  for (const auto& L : layers_) {
    const auto& s = L.spec;
    const std::size_t u = s.units, w = L.in_width;
    switch (s.kind) {
      case LayerKind::Dense: total += w * u + (s.bias ? u : 0); break;
      case LayerKind::Feature: total += generator_param_count(s.generator, L.ctx_width, w, u, s.bias); break;
      case LayerKind::Field: {
        const std::size_t gen_in = s.aggregation == Aggregation::Concat ? L.ctx_fields * w : w;
        total += generator_param_count(s.generator, gen_in, w, u, s.bias);
        if (s.aggregation == Aggregation::Attention) total += L.ctx_fields * w + L.ctx_fields;
        if (s.implicit_branch) total += F * F + w * u;
        break;
      }
    }
    if (s.batchnorm) total += 2 * u;
    width = s.kind == LayerKind::Field ? u * F : u;
  }
  if (layers_.empty()) width = spec_.family == Family::Sdpn ? head_in_ : F * e;
  return total + width + 1;
}

}  // namespace dpn
