#include "dpn/embeddings.hpp"

#include <set>

#include "dpn/error.hpp"
#include "dpn/rng.hpp"

namespace dpn {

std::size_t hash_id(std::string_view raw, std::size_t buckets) {
  if (buckets == 0) throw ConfigError("hash_id: buckets must be >= 1");
  return static_cast<std::size_t>(fnv1a64(raw) % buckets);
}

std::size_t hash_id(std::int64_t raw, std::size_t buckets) { return hash_id(std::to_string(raw), buckets); }

FieldSchema::FieldSchema(std::vector<FieldSpec> fields) {
  for (auto& f : fields) add(std::move(f));
}

void FieldSchema::add(FieldSpec f) {
  if (f.name.empty()) throw ConfigError("schema: empty field name");
  if (contains(f.name)) throw ConfigError("schema: duplicate field '" + f.name + "'");
  fields_.push_back(std::move(f));
}

bool FieldSchema::contains(std::string_view name) const {
  for (const auto& f : fields_)
    if (f.name == name) return true;
  return false;
}

std::size_t FieldSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < fields_.size(); ++i)
    if (fields_[i].name == name) return i;
  throw ConfigError("schema: unknown field '" + std::string(name) + "'");
}

EmbeddingTable::EmbeddingTable(std::string field, std::size_t vocab, std::size_t dim, std::mt19937_64& rng,
                               std::string param_name)
    : field_(std::move(field)) {
  if (vocab == 0 || dim == 0) throw ConfigError("embedding '" + field_ + "': vocab and dim must be positive");
  Tensor w({vocab, dim});
  glorot_uniform(w, vocab, dim, rng);
  weights = Parameter(param_name.empty() ? "emb." + field_ : std::move(param_name), std::move(w), true);
}

Var EmbeddingTable::lookup(Graph& g, std::span<const std::int64_t> ids) { return gather_rows(g, weights, ids, field_); }

Var concat_fields(const std::vector<Var>& lookups) {
  if (lookups.empty()) throw ConfigError("concat_fields: no fields");
  const std::size_t b = lookups.front().dim(0);
  for (const Var& v : lookups) {
    if (v.rank() != 2 || v.dim(0) != b) {
      throw DimensionError("concat_fields: batch mismatch, " + shape_str(v.shape()) + " vs batch " + std::to_string(b));
    }
  }
  if (lookups.size() == 1) return lookups.front();
  return concat(lookups, 1);
}

Var stack_fields(const std::vector<Var>& lookups) {
  Var flat = concat_fields(lookups);
  const std::size_t e = lookups.front().dim(1);
  for (const Var& v : lookups) {
    if (v.dim(1) != e) throw DimensionError("stack_fields: fields need equal width, got " + shape_str(v.shape()));
  }
  return reshape(flat, {flat.dim(0), lookups.size(), e});
}

}  // namespace dpn
