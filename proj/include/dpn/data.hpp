#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dpn/embeddings.hpp"

namespace dpn {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };
std::string_view split_name(Split s);

/// Mini-batch of field-slotted ids; `history` is [size, seq_len] when present.
struct Batch {
  std::size_t size = 0;
  std::vector<std::vector<std::int64_t>> fields;  ///< [field][row]
  std::vector<double> labels;
  std::size_t seq_len = 0;
  std::vector<std::int64_t> history;
};

/// Rows of categorical ids, one column per schema field, plus optional
/// behavior sequences over the vocabulary of `seq_field`. Index 0 of that
/// vocabulary is the padding id.
struct Dataset {
  FieldSchema schema;
  std::size_t rows = 0;
  std::vector<std::int64_t> ids;  ///< [rows, fields]
  std::vector<double> labels;
  std::vector<Split> splits;
  std::string seq_field;
  std::size_t seq_len = 0;
  std::vector<std::int64_t> history;  ///< [rows, seq_len]
  /// Generator-side click probabilities (synthetic sets only).
  std::vector<double> oracle;
  /// Raw value -> id per field, kept when vocabularies were inferred.
  std::map<std::string, std::vector<std::string>> vocab;

  std::int64_t id(std::size_t row, std::size_t field) const { return ids[row * schema.size() + field]; }
  std::vector<std::size_t> indices(Split s) const;
  Batch batch(std::span<const std::size_t> rows) const;
  /// Throws DataError naming the first broken invariant.
  void validate() const;
};

/// Shuffled assignment with floor counts for train and val; the remainder is test.
std::vector<Split> assign_splits(std::size_t n, std::array<std::size_t, 3> ratio, std::uint64_t seed);
void write_split_manifest(const std::string& path, const std::vector<Split>& splits);
std::vector<Split> read_split_manifest(const std::string& path, std::size_t rows);

struct ColumnSpec {
  std::string name;
  /// Hash into this many buckets; 0 infers the vocabulary from the file.
  std::size_t buckets = 0;
  /// Integer-valued numeric column discretized by floor(ln(v)^2) for v > 2.
  bool numeric = false;
};

struct IngestOptions {
  std::vector<ColumnSpec> columns;
  /// Empty: the file has no labels and every row is an observed positive.
  std::string label_column = "label";
  std::array<std::size_t, 3> split = {7, 2, 1};
  std::uint64_t seed = 1;
  /// Unlabeled files only: negatives per positive, resampling `target_field`
  /// away from the positives of each `user_field` value.
  std::size_t negatives = 0;
  std::string user_field;
  std::string target_field;
  /// Optional '|'-separated history column over the vocabulary of `target_field`.
  std::string history_column;
  std::size_t max_history = 0;
};

/// Headered CSV (RFC 4180 quoting), optionally gzip-compressed.
Dataset ingest_csv(const std::string& path, const IngestOptions& opt);

/// Discretization of Criteo-style counts.
std::string log2_bucket(std::string_view raw);

/// Appends `ratio` negatives per positive row (labels must all be 1).
void negative_sample(Dataset& d, const std::string& user_field, const std::string& target_field, std::size_t ratio,
                     std::uint64_t seed);

/// Processed dataset directory: schema.json, ids.csv, labels, split manifest.
void save_dataset(const Dataset& d, const std::string& dir);
Dataset load_dataset(const std::string& dir);

struct SynthMultiplicativeConfig {
  std::size_t rows = 10000;
  std::size_t users = 100;
  std::size_t items = 100;
  std::size_t dim = 8;
  /// Logit = scale * x_u^T M x_i with unit-variance latents.
  double scale = 1.0;
  std::uint64_t seed = 1;
};
/// Generator internals, row-major: per-id latent rows and the mixing matrix.
struct SynthLatents {
  std::vector<double> users;  ///< [users, dim] (multiplicative only)
  std::vector<double> items;  ///< [items, dim]; sequence: [vocab + 1, dim], row 0 zero
  std::vector<double> mix;    ///< [dim, dim] (multiplicative only)
};

/// Fields "user" and "item"; `oracle` holds sigmoid(scale * x_u^T M x_i).
Dataset synth_multiplicative(const SynthMultiplicativeConfig& cfg, SynthLatents* latents = nullptr);

struct SynthSequenceConfig {
  std::size_t rows = 10000;
  std::size_t seq_len = 6;
  std::size_t vocab = 200;  ///< real items; id 0 is padding
  std::size_t dim = 4;
  double noise = 0.5;
  std::uint64_t seed = 1;
};
/// Field "item" holds the target; label = [v_target . mean(v_hist) + noise > 0].
Dataset synth_sequence(const SynthSequenceConfig& cfg, SynthLatents* latents = nullptr);

/// AUC of the oracle probabilities on a split.
double oracle_auc(const Dataset& d, Split s);

/// Test-row mask (aligned with indices(Test)) of rows whose `field` value
/// occurs fewer than `threshold` times in the train split.
std::vector<bool> slice_by_frequency(const Dataset& d, const std::string& field, double threshold);

}  // namespace dpn
