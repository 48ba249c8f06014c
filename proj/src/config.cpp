#include "dpn/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "dpn/error.hpp"

namespace dpn {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type (" + std::string(j.at(key).type_name()) + ")");
  }
}

// Reject negative numbers before they wrap into size_t.
void read_size(const json& j, const char* key, std::size_t& out, const std::string& where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
    throw ConfigError(where + "." + key + ": expected a non-negative integer");
  }
  out = v.get<std::size_t>();
}

template <class E, class P>
void read_enum(const json& j, const char* key, E& out, P parse) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) throw ConfigError(std::string(key) + ": expected a string");
  out = parse(j.at(key).get<std::string>());
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

Activation parse_activation(std::string_view s) {
  for (auto a : {Activation::None, Activation::Relu, Activation::Sigmoid, Activation::Tanh})
    if (activation_name(a) == s) return a;
  throw ConfigError("unknown activation \"" + std::string(s) + "\"");
}

LayerSpec parse_layer(const json& j, const std::string& where) {
  check_keys(j, where, {"kind", "units", "context", "stop_grad", "generator", "aggregation", "implicit_branch", "batchnorm",
                        "activation", "bias"});
  LayerSpec l;
  read_enum(j, "kind", l.kind, parse_layer_kind);
  read_size(j, "units", l.units, where);
  if (j.contains("context")) {
    if (!j["context"].is_string()) throw ConfigError(where + ".context: expected a string");
    l.context = ContextRef::parse(j["context"].get<std::string>());
  }
  read(j, "stop_grad", l.stop_grad, where);
  if (j.contains("generator")) l.generator = parse_generator_spec(j["generator"], where + ".generator");
  read_enum(j, "aggregation", l.aggregation, parse_aggregation);
  read(j, "implicit_branch", l.implicit_branch, where);
  read(j, "batchnorm", l.batchnorm, where);
  read_enum(j, "activation", l.activation, parse_activation);
  read(j, "bias", l.bias, where);
  return l;
}

json layer_json(const LayerSpec& l) {
  return {{"kind", layer_kind_name(l.kind)},
          {"units", l.units},
          {"context", l.context.str()},
          {"stop_grad", l.stop_grad},
          {"generator", to_json(l.generator)},
          {"aggregation", aggregation_name(l.aggregation)},
          {"implicit_branch", l.implicit_branch},
          {"batchnorm", l.batchnorm},
          {"activation", activation_name(l.activation)},
          {"bias", l.bias}};
}

json columns_json(const std::vector<ColumnSpec>& cs) {
  json a = json::array();
  for (const auto& c : cs) a.push_back({{"name", c.name}, {"buckets", c.buckets}, {"numeric", c.numeric}});
  return a;
}

}  // namespace

GeneratorSpec parse_generator_spec(const json& j, const std::string& where) {
  check_keys(j, where, {"kind", "rank", "gate", "heads_in", "heads_out", "core_rank", "se_down_ratio", "static_kernel"});
  GeneratorSpec g;
  read_enum(j, "kind", g.kind, parse_generator_kind);
  read_size(j, "rank", g.rank, where);
  read_enum(j, "gate", g.gate, parse_gate);
  read_size(j, "heads_in", g.heads_in, where);
  read_size(j, "heads_out", g.heads_out, where);
  read_size(j, "core_rank", g.core_rank, where);
  read(j, "se_down_ratio", g.se_down_ratio, where);
  read(j, "static_kernel", g.static_kernel, where);
  return g;
}

json to_json(const GeneratorSpec& g) {
  return {{"kind", generator_kind_name(g.kind)}, {"rank", g.rank},           {"gate", gate_name(g.gate)},
          {"heads_in", g.heads_in},              {"heads_out", g.heads_out}, {"core_rank", g.core_rank},
          {"se_down_ratio", g.se_down_ratio},    {"static_kernel", g.static_kernel}};
}

json to_json(const FieldSchema& s) {
  json a = json::array();
  for (const auto& f : s.fields()) a.push_back({{"name", f.name}, {"vocab", f.vocab}, {"hashed", f.hashed}});
  return a;
}

FieldSchema parse_schema(const json& j) {
  if (!j.is_array()) throw ConfigError("schema: expected an array");
  FieldSchema s;
  for (const auto& f : j) {
    check_keys(f, "schema field", {"name", "vocab", "hashed"});
    FieldSpec fs;
    read(f, "name", fs.name, "schema field");
    read_size(f, "vocab", fs.vocab, "schema field");
    read(f, "hashed", fs.hashed, "schema field");
    s.add(fs);
  }
  return s;
}

ModelSpec parse_model_spec(const json& j, const std::string& where) {
  check_keys(j, where, {"family", "embed_dim", "layers", "sequence", "schema"});
  ModelSpec m;
  read_enum(j, "family", m.family, parse_family);
  read_size(j, "embed_dim", m.embed_dim, where);
  if (j.contains("schema")) m.schema = parse_schema(j["schema"]);
  if (j.contains("layers")) {
    if (!j["layers"].is_array()) throw ConfigError(where + ".layers: expected an array");
    for (std::size_t i = 0; i < j["layers"].size(); ++i) {
      m.layers.push_back(parse_layer(j["layers"][i], where + ".layers[" + std::to_string(i) + "]"));
    }
  }
  if (j.contains("sequence")) {
    const auto& s = j["sequence"];
    const std::string w = where + ".sequence";
    check_keys(s, w, {"item_field", "encoder", "decoder", "kernel", "homo_c", "local_encoder", "generator", "heads"});
    read(s, "item_field", m.sequence.item_field, w);
    read_enum(s, "encoder", m.sequence.encoder, parse_seq_encoder);
    read_enum(s, "decoder", m.sequence.decoder, parse_seq_decoder);
    read_size(s, "kernel", m.sequence.kernel, w);
    read_size(s, "homo_c", m.sequence.homo_c, w);
    read_enum(s, "local_encoder", m.sequence.local_encoder, parse_local_encoder);
    if (s.contains("generator")) m.sequence.generator = parse_generator_spec(s["generator"], w + ".generator");
    read_size(s, "heads", m.sequence.heads, w);
  }
  return m;
}

json to_json(const ModelSpec& m) {
  json layers = json::array();
  for (const auto& l : m.layers) layers.push_back(layer_json(l));
  json j = {{"family", family_name(m.family)}, {"embed_dim", m.embed_dim}, {"layers", layers}};
  if (m.schema.size()) j["schema"] = to_json(m.schema);
  if (m.family == Family::Sdpn) {
    const auto& s = m.sequence;
    j["sequence"] = {{"item_field", s.item_field},
                     {"encoder", seq_encoder_name(s.encoder)},
                     {"decoder", seq_decoder_name(s.decoder)},
                     {"kernel", s.kernel},
                     {"homo_c", s.homo_c},
                     {"local_encoder", local_encoder_name(s.local_encoder)},
                     {"generator", to_json(s.generator)},
                     {"heads", s.heads}};
  }
  return j;
}

RunConfig parse_run_config(const json& j) {
  check_keys(j, "config", {"name", "data", "model", "train", "out", "slices", "bench", "seed"});
  RunConfig c;
  read(j, "name", c.name, "config");
  read(j, "out", c.out, "config");
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, "data", {"source", "path", "ingest", "multiplicative", "sequence"});
    read(d, "source", c.data.source, "data");
    read(d, "path", c.data.path, "data");
    static const std::set<std::string> sources = {"csv", "dataset", "synth_multiplicative", "synth_sequence"};
    if (!sources.count(c.data.source)) throw ConfigError("data.source: unknown source '" + c.data.source + "'");
    if (d.contains("ingest")) {
      const auto& in = d["ingest"];
      auto& o = c.data.ingest;
      check_keys(in, "data.ingest", {"columns", "label_column", "split", "seed", "negatives", "user_field", "target_field",
                                     "history_column", "max_history"});
      if (in.contains("columns")) {
        if (!in["columns"].is_array()) throw ConfigError("data.ingest.columns: expected an array");
        for (const auto& col : in["columns"]) {
          ColumnSpec cs;
          if (col.is_string()) {
            cs.name = col.get<std::string>();
          } else {
            check_keys(col, "data.ingest.columns[]", {"name", "buckets", "numeric"});
            read(col, "name", cs.name, "data.ingest.columns[]");
            read_size(col, "buckets", cs.buckets, "data.ingest.columns[]");
            read(col, "numeric", cs.numeric, "data.ingest.columns[]");
          }
          o.columns.push_back(cs);
        }
      }
      read(in, "label_column", o.label_column, "data.ingest");
      read(in, "split", o.split, "data.ingest");
      read(in, "seed", o.seed, "data.ingest");
      read_size(in, "negatives", o.negatives, "data.ingest");
      read(in, "user_field", o.user_field, "data.ingest");
      read(in, "target_field", o.target_field, "data.ingest");
      read(in, "history_column", o.history_column, "data.ingest");
      read_size(in, "max_history", o.max_history, "data.ingest");
    }
    if (d.contains("multiplicative")) {
      const auto& s = d["multiplicative"];
      auto& o = c.data.multiplicative;
      check_keys(s, "data.multiplicative", {"rows", "users", "items", "dim", "scale", "seed"});
      read_size(s, "rows", o.rows, "data.multiplicative");
      read_size(s, "users", o.users, "data.multiplicative");
      read_size(s, "items", o.items, "data.multiplicative");
      read_size(s, "dim", o.dim, "data.multiplicative");
      read(s, "scale", o.scale, "data.multiplicative");
      read(s, "seed", o.seed, "data.multiplicative");
    }
    if (d.contains("sequence")) {
      const auto& s = d["sequence"];
      auto& o = c.data.sequence;
      check_keys(s, "data.sequence", {"rows", "seq_len", "vocab", "dim", "noise", "seed"});
      read_size(s, "rows", o.rows, "data.sequence");
      read_size(s, "seq_len", o.seq_len, "data.sequence");
      read_size(s, "vocab", o.vocab, "data.sequence");
      read_size(s, "dim", o.dim, "data.sequence");
      read(s, "noise", o.noise, "data.sequence");
      read(s, "seed", o.seed, "data.sequence");
    }
  }
  if (j.contains("model")) c.model = parse_model_spec(j["model"]);
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, "train", {"lr", "beta1", "beta2", "eps", "batch_size", "epochs", "seed", "precision", "patience", "threads"});
    read(t, "lr", c.train.adam.lr, "train");
    read(t, "beta1", c.train.adam.beta1, "train");
    read(t, "beta2", c.train.adam.beta2, "train");
    read(t, "eps", c.train.adam.eps, "train");
    read_size(t, "batch_size", c.train.batch_size, "train");
    read_size(t, "epochs", c.train.epochs, "train");
    read(t, "seed", c.train.seed, "train");
    read_enum(t, "precision", c.train.precision, parse_precision);
    read_size(t, "patience", c.train.patience, "train");
    read_size(t, "threads", c.train.threads, "train");
    if (!(c.train.adam.lr >= 0.0)) throw ConfigError("train.lr: must be >= 0");
  }
  // Top-level seed is shorthand for train.seed.
  if (j.contains("seed")) read(j, "seed", c.train.seed, "config");
  read(j, "slices", c.slices, "config");
  for (const auto& s : c.slices) parse_slice(s);
  if (j.contains("bench")) {
    const auto& b = j["bench"];
    check_keys(b, "bench", {"models", "rows", "repeats"});
    read_size(b, "rows", c.bench.rows, "bench");
    read_size(b, "repeats", c.bench.repeats, "bench");
    if (b.contains("models")) {
      if (!b["models"].is_array()) throw ConfigError("bench.models: expected an array");
      for (std::size_t i = 0; i < b["models"].size(); ++i) {
        const auto& m = b["models"][i];
        const std::string w = "bench.models[" + std::to_string(i) + "]";
        check_keys(m, w, {"name", "model"});
        BenchModel bm;
        read(m, "name", bm.name, w);
        if (!m.contains("model")) throw ConfigError(w + ": missing 'model'");
        bm.model = parse_model_spec(m["model"], w + ".model");
        c.bench.models.push_back(std::move(bm));
      }
    }
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& c) {
  const auto& in = c.data.ingest;
  const auto& mu = c.data.multiplicative;
  const auto& sq = c.data.sequence;
  json data = {{"source", c.data.source},
               {"path", c.data.path},
               {"ingest",
                {{"columns", columns_json(in.columns)},
                 {"label_column", in.label_column},
                 {"split", in.split},
                 {"seed", in.seed},
                 {"negatives", in.negatives},
                 {"user_field", in.user_field},
                 {"target_field", in.target_field},
                 {"history_column", in.history_column},
                 {"max_history", in.max_history}}},
               {"multiplicative",
                {{"rows", mu.rows},
                 {"users", mu.users},
                 {"items", mu.items},
                 {"dim", mu.dim},
                 {"scale", mu.scale},
                 {"seed", mu.seed}}},
               {"sequence",
                {{"rows", sq.rows},
                 {"seq_len", sq.seq_len},
                 {"vocab", sq.vocab},
                 {"dim", sq.dim},
                 {"noise", sq.noise},
                 {"seed", sq.seed}}}};
  const auto& t = c.train;
  json train = {{"lr", t.adam.lr},           {"beta1", t.adam.beta1},
                {"beta2", t.adam.beta2},     {"eps", t.adam.eps},
                {"batch_size", t.batch_size}, {"epochs", t.epochs},
                {"seed", t.seed},            {"precision", precision_name(t.precision)},
                {"patience", t.patience},    {"threads", t.threads}};
  json bench_models = json::array();
  for (const auto& bm : c.bench.models) bench_models.push_back({{"name", bm.name}, {"model", to_json(bm.model)}});
  return {{"name", c.name},
          {"data", data},
          {"model", to_json(c.model)},
          {"train", train},
          {"out", c.out},
          {"slices", c.slices},
          {"bench", {{"models", bench_models}, {"rows", c.bench.rows}, {"repeats", c.bench.repeats}}}};
}

std::string resolve_data_path(const std::string& path) {
  namespace fs = std::filesystem;
  if (path.empty() || fs::path(path).is_absolute()) return path;
  if (const char* root = std::getenv("DPN_DATA_DIR"); root && *root) return (fs::path(root) / path).string();
  return path;
}

Dataset load_data(const DataConfig& d) {
  if (d.source == "synth_multiplicative") return synth_multiplicative(d.multiplicative);
  if (d.source == "synth_sequence") return synth_sequence(d.sequence);
  const std::string p = resolve_data_path(d.path);
  if (p.empty()) throw ConfigError("data.path: required for source '" + d.source + "'");
  if (!std::filesystem::exists(p)) throw ConfigError("data path not found: " + p);
  if (d.source == "csv") return ingest_csv(p, d.ingest);
  if (d.source == "dataset") return load_dataset(p);
  throw ConfigError("data.source: unknown source '" + d.source + "'");
}

std::pair<std::string, double> parse_slice(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == s.size()) {
    throw ConfigError("slice '" + s + "': expected field:threshold");
  }
  const std::string field = s.substr(0, colon), th = s.substr(colon + 1);
  if (th == "inf") return {field, std::numeric_limits<double>::infinity()};
  try {
    std::size_t used = 0;
    const double v = std::stod(th, &used);
    if (used != th.size() || v < 0) throw std::invalid_argument(th);
    return {field, v};
  } catch (const std::exception&) {
    throw ConfigError("slice '" + s + "': threshold must be a non-negative number or inf");
  }
}

}  // namespace dpn
