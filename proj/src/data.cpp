#include "dpn/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "dpn/error.hpp"
#include "dpn/metrics.hpp"
#include "dpn/rng.hpp"

namespace dpn {

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < rows; ++r)
    if (splits[r] == s) out.push_back(r);
  return out;
}

Batch Dataset::batch(std::span<const std::size_t> rs) const {
  Batch b;
  b.size = rs.size();
  const std::size_t F = schema.size();
  b.fields.assign(F, std::vector<std::int64_t>(rs.size()));
  b.labels.resize(rs.size());
  b.seq_len = seq_len;
  if (seq_len) b.history.resize(rs.size() * seq_len);
  for (std::size_t i = 0; i < rs.size(); ++i) {
    const std::size_t r = rs[i];
    for (std::size_t f = 0; f < F; ++f) b.fields[f][i] = ids[r * F + f];
    b.labels[i] = labels[r];
    if (seq_len) std::copy_n(history.begin() + r * seq_len, seq_len, b.history.begin() + i * seq_len);
  }
  return b;
}

void Dataset::validate() const {
  const std::size_t F = schema.size();
  if (ids.size() != rows * F) throw DataError("dataset: id table holds " + std::to_string(ids.size()) + " values, expected " + std::to_string(rows * F));
  if (labels.size() != rows) throw DataError("dataset: label count differs from row count");
  if (splits.size() != rows) throw DataError("dataset: split count differs from row count");
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] != 0.0 && labels[r] != 1.0) throw DataError("dataset: row " + std::to_string(r) + " has non-binary label");
    for (std::size_t f = 0; f < F; ++f) {
      const auto v = ids[r * F + f];
      if (v < 0 || static_cast<std::size_t>(v) >= schema[f].vocab) {
        throw DataError("dataset: row " + std::to_string(r) + " field '" + schema[f].name + "' id " + std::to_string(v) +
                        " outside vocab " + std::to_string(schema[f].vocab));
      }
    }
  }
  if (seq_len) {
    const std::size_t vocab = schema[schema.index_of(seq_field)].vocab;
    if (history.size() != rows * seq_len) throw DataError("dataset: history size differs from rows * seq_len");
    for (auto v : history)
      if (v < 0 || static_cast<std::size_t>(v) >= vocab) throw DataError("dataset: history id " + std::to_string(v) + " outside vocab");
  }
}

std::vector<Split> assign_splits(std::size_t n, std::array<std::size_t, 3> ratio, std::uint64_t seed) {
  const std::size_t total = ratio[0] + ratio[1] + ratio[2];
  if (total == 0) throw ConfigError("split ratio must not be all zero");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(stream_seed(seed, "split"));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = n * ratio[0] / total, n_val = n * ratio[1] / total;
  std::vector<Split> out(n, Split::Test);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train) {
      out[order[i]] = Split::Train;
    } else if (i < n_train + n_val) {
      out[order[i]] = Split::Val;
    }
  }
  return out;
}

void write_split_manifest(const std::string& path, const std::vector<Split>& splits) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write split manifest " + path);
  for (std::size_t r = 0; r < splits.size(); ++r) out << r << '\t' << split_name(splits[r]) << '\n';
}

std::vector<Split> read_split_manifest(const std::string& path, std::size_t rows) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read split manifest " + path);
  std::vector<Split> out(rows, Split::Test);
  std::vector<char> seen(rows, 0);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::size_t r;
    std::string s;
    if (!(ss >> r >> s) || r >= rows) throw DataError(path + ":" + std::to_string(lineno) + ": malformed manifest line");
    if (s == "train") {
      out[r] = Split::Train;
    } else if (s == "val") {
      out[r] = Split::Val;
    } else if (s == "test") {
      out[r] = Split::Test;
    } else {
      throw DataError(path + ":" + std::to_string(lineno) + ": unknown split '" + s + "'");
    }
    seen[r] = 1;
  }
  if (std::count(seen.begin(), seen.end(), 0)) throw DataError(path + ": manifest does not cover every row");
  return out;
}

namespace {

class LineReader {
 public:
  explicit LineReader(const std::string& path) : path_(path) {
    if (!std::filesystem::exists(path)) throw DataError("no such file: " + path);
    f_ = gzopen(path.c_str(), "rb");
    if (!f_) throw DataError("cannot open " + path);
  }
  ~LineReader() {
    if (f_) gzclose(f_);
  }
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;

  bool next(std::string& line) {
    line.clear();
    char buf[1 << 14];
    while (gzgets(f_, buf, sizeof buf)) {
      line += buf;
      if (!line.empty() && line.back() == '\n') break;
    }
    if (line.empty()) {
      int err = 0;
      gzerror(f_, &err);
      if (err != Z_OK && err != Z_STREAM_END) throw DataError(path_ + ": read error (corrupt gzip?)");
      return false;
    }
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
    ++lineno_;
    return true;
  }
  std::size_t lineno() const { return lineno_; }

 private:
  std::string path_;
  gzFile f_ = nullptr;
  std::size_t lineno_ = 0;
};

std::vector<std::string> split_csv(const std::string& line, const std::string& where) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (quoted) throw DataError(where + ": unterminated quote");
  out.push_back(std::move(cur));
  return out;
}

double parse_label(const std::string& s, const std::string& where) {
  if (s == "1" || s == "1.0") return 1.0;
  if (s == "0" || s == "0.0") return 0.0;
  throw DataError(where + ": label must be 0 or 1, got '" + s + "'");
}

// Maps raw tokens to ids, either by hashing or by order of first appearance.
struct Encoder {
  std::size_t buckets = 0;
  std::unordered_map<std::string, std::int64_t> index;
  std::vector<std::string> values;

  std::int64_t operator()(const std::string& raw) {
    if (buckets) return static_cast<std::int64_t>(hash_id(raw, buckets));
    auto [it, inserted] = index.try_emplace(raw, static_cast<std::int64_t>(values.size()));
    if (inserted) values.push_back(raw);
    return it->second;
  }
  std::size_t vocab() const { return buckets ? buckets : values.size(); }
};

}  // namespace

std::string log2_bucket(std::string_view raw) {
  if (raw.empty()) return "missing";
  double v = 0.0;
  try {
    v = std::stod(std::string(raw));
  } catch (const std::exception&) {
    return "bad";
  }
  if (v > 2.0) {
    const double l = std::log(v);
    return "b" + std::to_string(static_cast<long long>(std::floor(l * l)));
  }
  return "v" + std::to_string(static_cast<long long>(std::floor(v)));
}

Dataset ingest_csv(const std::string& path, const IngestOptions& opt) {
  if (opt.columns.empty()) throw ConfigError("ingest: no columns configured");
  LineReader reader(path);
  std::string line;
  if (!reader.next(line)) throw DataError(path + ": empty file");
  const auto header = split_csv(line, path + ":1");
  auto column = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(path + ": unknown column '" + name + "' (not in header)");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> cols;
  for (const auto& c : opt.columns) cols.push_back(column(c.name));
  const bool labeled = !opt.label_column.empty();
  const std::size_t label_col = labeled ? column(opt.label_column) : 0;
  const bool with_hist = !opt.history_column.empty();
  std::size_t hist_col = 0, hist_field = 0;
  if (with_hist) {
    hist_col = column(opt.history_column);
    if (opt.max_history == 0) throw ConfigError("ingest: max_history must be positive with a history column");
    const auto it = std::find_if(opt.columns.begin(), opt.columns.end(), [&](const ColumnSpec& c) { return c.name == opt.target_field; });
    if (it == opt.columns.end()) throw ConfigError("ingest: history needs target_field among the columns");
    hist_field = static_cast<std::size_t>(it - opt.columns.begin());
  }

  std::vector<Encoder> enc(opt.columns.size());
  for (std::size_t f = 0; f < enc.size(); ++f) enc[f].buckets = opt.columns[f].buckets;
  if (with_hist && enc[hist_field].buckets == 0) enc[hist_field]("<pad>");

  Dataset d;
  const std::size_t F = opt.columns.size();
  while (reader.next(line)) {
    const std::string where = path + ":" + std::to_string(reader.lineno());
    if (line.empty()) continue;
    const auto cells = split_csv(line, where);
    if (cells.size() != header.size()) {
      throw DataError(where + ": expected " + std::to_string(header.size()) + " columns, got " + std::to_string(cells.size()));
    }
    for (std::size_t f = 0; f < F; ++f) {
      const std::string& raw = cells[cols[f]];
      d.ids.push_back(enc[f](opt.columns[f].numeric ? log2_bucket(raw) : raw));
    }
    d.labels.push_back(labeled ? parse_label(cells[label_col], where) : 1.0);
    if (with_hist) {
      std::vector<std::int64_t> h;
      std::stringstream ss(cells[hist_col]);
      std::string tok;
      while (std::getline(ss, tok, '|'))
        if (!tok.empty()) h.push_back(enc[hist_field](tok));
      // keep the most recent items, left-pad with id 0
      if (h.size() > opt.max_history) h.erase(h.begin(), h.end() - static_cast<std::ptrdiff_t>(opt.max_history));
      d.history.insert(d.history.end(), opt.max_history - h.size(), 0);
      d.history.insert(d.history.end(), h.begin(), h.end());
    }
    ++d.rows;
  }
  for (std::size_t f = 0; f < F; ++f) {
    d.schema.add({opt.columns[f].name, std::max<std::size_t>(1, enc[f].vocab()), enc[f].buckets > 0});
    if (!enc[f].buckets) d.vocab[opt.columns[f].name] = enc[f].values;
  }
  if (with_hist) {
    d.seq_field = opt.target_field;
    d.seq_len = opt.max_history;
  }
  d.splits.assign(d.rows, Split::Train);
  if (!labeled && opt.negatives > 0) {
    negative_sample(d, opt.user_field, opt.target_field, opt.negatives, opt.seed);
  }
  d.splits = assign_splits(d.rows, opt.split, opt.seed);
  d.validate();
  return d;
}

void negative_sample(Dataset& d, const std::string& user_field, const std::string& target_field, std::size_t ratio,
                     std::uint64_t seed) {
  if (ratio < 1) throw ConfigError("negative_sample: ratio must be >= 1");
  const std::size_t uf = d.schema.index_of(user_field), tf = d.schema.index_of(target_field);
  const std::size_t F = d.schema.size(), vocab = d.schema[tf].vocab;
  const std::size_t first = (d.seq_len && d.seq_field == target_field) ? 1 : 0;  // never sample the padding id
  std::unordered_map<std::int64_t, std::set<std::int64_t>> seen;
  for (std::size_t r = 0; r < d.rows; ++r) {
    if (d.labels[r] != 1.0) throw DataError("negative_sample: input rows must all be positives");
    seen[d.id(r, uf)].insert(d.id(r, tf));
  }
  std::mt19937_64 rng(stream_seed(seed, "negatives"));
  std::uniform_int_distribution<std::int64_t> pick(static_cast<std::int64_t>(first), static_cast<std::int64_t>(vocab) - 1);
  const std::size_t n = d.rows;
  for (std::size_t r = 0; r < n; ++r) {
    const auto& pos = seen[d.id(r, uf)];
    if (pos.size() >= vocab - first) {
      throw DataError("negative_sample: " + user_field + " " + std::to_string(d.id(r, uf)) + " has seen every " +
                      target_field + "; vocab too small to sample");
    }
    for (std::size_t k = 0; k < ratio; ++k) {
      std::int64_t t;
      do {
        t = pick(rng);
      } while (pos.count(t));
      for (std::size_t f = 0; f < F; ++f) d.ids.push_back(f == tf ? t : d.ids[r * F + f]);
      d.labels.push_back(0.0);
      d.splits.push_back(d.splits.empty() ? Split::Train : d.splits[r]);
      if (d.seq_len) {
        for (std::size_t j = 0; j < d.seq_len; ++j) d.history.push_back(d.history[r * d.seq_len + j]);
      }
      if (!d.oracle.empty()) d.oracle.push_back(d.oracle[r]);
      ++d.rows;
    }
  }
}

void save_dataset(const Dataset& d, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json schema;
  schema["rows"] = d.rows;
  schema["seq_field"] = d.seq_field;
  schema["seq_len"] = d.seq_len;
  schema["has_oracle"] = !d.oracle.empty();
  for (const auto& f : d.schema.fields()) schema["fields"].push_back({{"name", f.name}, {"vocab", f.vocab}, {"hashed", f.hashed}});
  std::ofstream(fs::path(dir) / "schema.json") << schema.dump(2) << '\n';
  std::ofstream rows(fs::path(dir) / "rows.csv");
  rows.precision(17);
  for (std::size_t r = 0; r < d.rows; ++r) {
    rows << d.labels[r];
    for (std::size_t f = 0; f < d.schema.size(); ++f) rows << ',' << d.id(r, f);
    for (std::size_t j = 0; j < d.seq_len; ++j) rows << ',' << d.history[r * d.seq_len + j];
    if (!d.oracle.empty()) rows << ',' << d.oracle[r];
    rows << '\n';
  }
  write_split_manifest((fs::path(dir) / "split.txt").string(), d.splits);
  if (!d.vocab.empty()) {
    fs::create_directories(fs::path(dir) / "vocab");
    for (const auto& [field, values] : d.vocab) {
      std::ofstream v(fs::path(dir) / "vocab" / (field + ".txt"));
      for (const auto& s : values) v << s << '\n';
    }
  }
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path sp = fs::path(dir) / "schema.json";
  std::ifstream sin(sp);
  if (!sin) throw DataError("no dataset at " + dir + " (missing schema.json)");
  nlohmann::json schema;
  try {
    sin >> schema;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(sp.string() + ": " + e.what());
  }
  Dataset d;
  for (const auto& f : schema.at("fields")) d.schema.add({f.at("name"), f.at("vocab"), f.at("hashed")});
  d.seq_field = schema.value("seq_field", "");
  d.seq_len = schema.value("seq_len", 0);
  const bool has_oracle = schema.value("has_oracle", false);
  const std::size_t expect = schema.at("rows");
  LineReader rows((fs::path(dir) / "rows.csv").string());
  std::string line;
  const std::size_t F = d.schema.size();
  while (rows.next(line)) {
    const std::string where = (fs::path(dir) / "rows.csv").string() + ":" + std::to_string(rows.lineno());
    const auto cells = split_csv(line, where);
    if (cells.size() != 1 + F + d.seq_len + (has_oracle ? 1 : 0)) throw DataError(where + ": wrong column count");
    try {
      d.labels.push_back(parse_label(cells[0], where));
      for (std::size_t f = 0; f < F; ++f) d.ids.push_back(std::stoll(cells[1 + f]));
      for (std::size_t j = 0; j < d.seq_len; ++j) d.history.push_back(std::stoll(cells[1 + F + j]));
      if (has_oracle) d.oracle.push_back(std::stod(cells.back()));
    } catch (const std::logic_error&) {
      throw DataError(where + ": non-numeric cell");
    }
    ++d.rows;
  }
  if (d.rows != expect) throw DataError(dir + ": schema.json says " + std::to_string(expect) + " rows, found " + std::to_string(d.rows));
  d.splits = read_split_manifest((fs::path(dir) / "split.txt").string(), d.rows);
  d.validate();
  return d;
}

namespace {

double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Dataset synth_multiplicative(const SynthMultiplicativeConfig& cfg, SynthLatents* latents) {
  if (cfg.dim == 0 || cfg.dim > 16) throw ConfigError("synth_multiplicative: dim must be in [1, 16]");
  std::mt19937_64 rng(stream_seed(cfg.seed, "synth"));
  std::normal_distribution<double> nd;
  std::vector<double> U(cfg.users * cfg.dim), I(cfg.items * cfg.dim), M(cfg.dim * cfg.dim);
  for (double& v : U) v = nd(rng);
  for (double& v : I) v = nd(rng);
  for (double& v : M) v = nd(rng) / static_cast<double>(cfg.dim);
  Dataset d;
  d.schema.add({"user", cfg.users, false});
  d.schema.add({"item", cfg.items, false});
  std::uniform_int_distribution<std::size_t> pu(0, cfg.users - 1), pi(0, cfg.items - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::size_t r = 0; r < cfg.rows; ++r) {
    const std::size_t u = pu(rng), i = pi(rng);
    double logit = 0.0;
    for (std::size_t a = 0; a < cfg.dim; ++a)
      for (std::size_t b = 0; b < cfg.dim; ++b) logit += U[u * cfg.dim + a] * M[a * cfg.dim + b] * I[i * cfg.dim + b];
    const double p = sigmoid_d(cfg.scale * logit);
    d.ids.push_back(static_cast<std::int64_t>(u));
    d.ids.push_back(static_cast<std::int64_t>(i));
    d.labels.push_back(coin(rng) < p ? 1.0 : 0.0);
    d.oracle.push_back(p);
  }
  d.rows = cfg.rows;
  d.splits = assign_splits(d.rows, {7, 2, 1}, cfg.seed);
  if (latents) *latents = {U, I, M};
  return d;
}

Dataset synth_sequence(const SynthSequenceConfig& cfg, SynthLatents* latents) {
  if (cfg.seq_len == 0 || cfg.vocab == 0 || cfg.dim == 0) throw ConfigError("synth_sequence: sizes must be positive");
  if (cfg.noise <= 0.0) throw ConfigError("synth_sequence: noise must be positive");
  std::mt19937_64 rng(stream_seed(cfg.seed, "synth"));
  std::normal_distribution<double> nd;
  std::vector<double> V((cfg.vocab + 1) * cfg.dim, 0.0);  // row 0 is padding
  for (std::size_t k = cfg.dim; k < V.size(); ++k) V[k] = nd(rng);
  Dataset d;
  d.schema.add({"item", cfg.vocab + 1, false});
  d.seq_field = "item";
  d.seq_len = cfg.seq_len;
  std::uniform_int_distribution<std::int64_t> pick(1, static_cast<std::int64_t>(cfg.vocab));
  // score scale: v_t . mean(v_h) has variance dim / seq_len
  const double norm = std::sqrt(static_cast<double>(cfg.seq_len) / static_cast<double>(cfg.dim));
  for (std::size_t r = 0; r < cfg.rows; ++r) {
    std::vector<double> pooled(cfg.dim, 0.0);
    for (std::size_t j = 0; j < cfg.seq_len; ++j) {
      const auto h = pick(rng);
      d.history.push_back(h);
      for (std::size_t a = 0; a < cfg.dim; ++a) pooled[a] += V[h * cfg.dim + a] / static_cast<double>(cfg.seq_len);
    }
    const auto t = pick(rng);
    double s = 0.0;
    for (std::size_t a = 0; a < cfg.dim; ++a) s += V[t * cfg.dim + a] * pooled[a];
    s *= norm;
    d.ids.push_back(t);
    d.labels.push_back(s + cfg.noise * nd(rng) > 0.0 ? 1.0 : 0.0);
    d.oracle.push_back(0.5 * std::erfc(-s / (cfg.noise * std::sqrt(2.0))));
  }
  d.rows = cfg.rows;
  d.splits = assign_splits(d.rows, {7, 2, 1}, cfg.seed);
  if (latents) *latents = {{}, V, {}};
  return d;
}

double oracle_auc(const Dataset& d, Split s) {
  if (d.oracle.empty()) throw DataError("dataset carries no oracle scores");
  std::vector<double> p, y;
  for (std::size_t r : d.indices(s)) {
    p.push_back(d.oracle[r]);
    y.push_back(d.labels[r]);
  }
  return auc(p, y);
}

std::vector<bool> slice_by_frequency(const Dataset& d, const std::string& field, double threshold) {
  const std::size_t f = d.schema.index_of(field);
  std::unordered_map<std::int64_t, std::size_t> freq;
  for (std::size_t r = 0; r < d.rows; ++r)
    if (d.splits[r] == Split::Train) ++freq[d.id(r, f)];
  std::vector<bool> mask;
  for (std::size_t r : d.indices(Split::Test)) {
    const auto it = freq.find(d.id(r, f));
    const double n = it == freq.end() ? 0.0 : static_cast<double>(it->second);
    mask.push_back(n < threshold);
  }
  return mask;
}

}  // namespace dpn
