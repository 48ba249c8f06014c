#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpn/module.hpp"
#include "dpn/ops.hpp"

namespace dpn {

/// FNV-1a 64 of the raw key, reduced mod `buckets`. Integers hash their
/// decimal spelling, so 42 and "42" land in the same bucket.
std::size_t hash_id(std::string_view raw, std::size_t buckets);
std::size_t hash_id(std::int64_t raw, std::size_t buckets);

struct FieldSpec {
  std::string name;
  std::size_t vocab = 0;
  bool hashed = false;
};

class FieldSchema {
 public:
  FieldSchema() = default;
  explicit FieldSchema(std::vector<FieldSpec> fields);

  void add(FieldSpec f);
  const std::vector<FieldSpec>& fields() const { return fields_; }
  std::size_t size() const { return fields_.size(); }
  const FieldSpec& operator[](std::size_t i) const { return fields_[i]; }
  /// Throws ConfigError if absent.
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  bool operator==(const FieldSchema&) const = default;

 private:
  std::vector<FieldSpec> fields_;
};

inline bool operator==(const FieldSpec& a, const FieldSpec& b) {
  return a.name == b.name && a.vocab == b.vocab && a.hashed == b.hashed;
}

class EmbeddingTable : public Module {
 public:
  EmbeddingTable(std::string field, std::size_t vocab, std::size_t dim, std::mt19937_64& rng,
                 std::string param_name = {});

  /// [batch] ids -> [batch, dim]
  Var lookup(Graph& g, std::span<const std::int64_t> ids);

  const std::string& field() const { return field_; }
  std::size_t vocab() const { return weights.value.dim(0); }
  std::size_t dim() const { return weights.value.dim(1); }

  void collect(std::vector<Parameter*>& out) override { out.push_back(&weights); }

  Parameter weights;

 private:
  std::string field_;
};

/// Per-field lookups [batch, e_i] -> x0 [batch, sum e_i], in the given order.
Var concat_fields(const std::vector<Var>& lookups);
/// Per-field lookups of equal width e -> [batch, t, e].
Var stack_fields(const std::vector<Var>& lookups);

}  // namespace dpn
