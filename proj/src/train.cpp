#include "dpn/train.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <thread>

#include "dpn/error.hpp"

namespace dpn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

bool has_batchnorm(Model& m) {
  std::vector<std::pair<std::string, Tensor*>> bufs;
  m.collect_buffers(bufs);
  return !bufs.empty();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void validate(const TrainConfig& cfg, Model& model) {
  if (!(cfg.adam.lr >= 0.0) || !std::isfinite(cfg.adam.lr)) throw ConfigError("train: lr must be finite and >= 0");
  if (cfg.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (cfg.batch_size < 2 && has_batchnorm(model)) throw ConfigError("train: batch_size must be >= 2 with batch norm");
  if (cfg.threads == 0) throw ConfigError("train: threads must be positive");
  if (!(cfg.adam.beta1 >= 0.0 && cfg.adam.beta1 < 1.0) || !(cfg.adam.beta2 >= 0.0 && cfg.adam.beta2 < 1.0)) {
    throw ConfigError("train: adam betas must lie in [0, 1)");
  }
}

std::vector<double> predict(Model& model, const Dataset& data, std::span<const std::size_t> rows, std::size_t batch_size,
                            Precision precision, std::size_t threads) {
  if (batch_size == 0) throw ConfigError("predict: batch_size must be positive");
  // Graph::param allocates missing gradient buffers; do it up front so workers only read.
  for (Parameter* p : model.parameters())
    if (p->grad.shape() != p->value.shape()) p->grad = Tensor(p->value.shape());
  std::vector<double> out(rows.size());
  const std::size_t nb = (rows.size() + batch_size - 1) / batch_size;
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t b = first; b < nb; b += stride) {
      const std::size_t lo = b * batch_size, hi = std::min(rows.size(), lo + batch_size);
      const Batch batch = data.batch(rows.subspan(lo, hi - lo));
      Graph g(precision);
      const Tensor& z = model.forward(g, batch, false).value();
      for (std::size_t i = 0; i < z.size(); ++i) out[lo + i] = 1.0 / (1.0 + std::exp(-z[i]));
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, nb));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& th : pool) th.join();
  }
  return out;
}

EvalReport evaluate(Model& model, const Dataset& data, Split split, const TrainConfig& cfg,
                    const std::map<std::string, std::vector<bool>>& slices) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = data.indices(split);
  if (rows.empty()) throw DataError(std::string("evaluate: split ") + std::string(split_name(split)) + " is empty");
  const auto probs = predict(model, data, rows, std::max<std::size_t>(cfg.batch_size, 1024), cfg.precision, cfg.threads);
  std::vector<double> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = data.labels[rows[i]];
  EvalReport r;
  r.n = rows.size();
  r.auc = auc(probs, labels);
  r.logloss = logloss(probs, labels);
  r.params = model.dense_param_count();
  for (const auto& [name, mask] : slices) {
    if (mask.size() != rows.size()) {
      throw DimensionError("evaluate: slice '" + name + "' mask has " + std::to_string(mask.size()) + " entries, split has " +
                           std::to_string(rows.size()));
    }
    r.slices[name] = slice_metrics(probs, labels, mask);
  }
  r.wall_time_s = seconds_since(t0);
  return r;
}

Snapshot take_snapshot(Model& model) {
  Snapshot s;
  for (Parameter* p : model.parameters()) s.params.push_back(p->value);
  std::vector<std::pair<std::string, Tensor*>> bufs;
  model.collect_buffers(bufs);
  for (auto& [name, t] : bufs) s.buffers.push_back(*t);
  return s;
}

void restore_snapshot(Model& model, const Snapshot& s) {
  const auto ps = model.parameters();
  if (ps.size() != s.params.size()) throw UsageError("restore_snapshot: parameter count changed");
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = s.params[i];
  std::vector<std::pair<std::string, Tensor*>> bufs;
  model.collect_buffers(bufs);
  for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i].second = s.buffers.at(i);
}

Trainer::Trainer(Model& model, const TrainConfig& cfg)
    : model_(model), cfg_(cfg), opt_(model.parameters(), cfg.adam), rng_(cfg.seed) {
  validate(cfg_, model_);
}

double Trainer::run_epoch(const Dataset& data, std::span<const std::size_t> rows) {
  const bool bn = has_batchnorm(model_);
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t lo = 0; lo < rows.size(); lo += cfg_.batch_size) {
    const std::size_t hi = std::min(rows.size(), lo + cfg_.batch_size);
    if (bn && hi - lo < 2) break;  // batch statistics need two rows
    const Batch batch = data.batch(rows.subspan(lo, hi - lo));
    opt_.zero_grad();
    Graph g(cfg_.precision);
    Var loss = bce_with_logits(model_.forward(g, batch, true), batch.labels);
    const double l = loss.value().item();
    if (!std::isfinite(l)) {
      throw DivergenceError("training loss became non-finite at step " + std::to_string(opt_.steps() + 1));
    }
    g.backward(loss);
    opt_.step();
    total += l;
    ++batches;
  }
  return batches ? total / batches : 0.0;
}

TrainResult Trainer::fit(const Dataset& data, const std::function<void(const EpochReport&)>& on_epoch) {
  auto train_rows = data.indices(Split::Train);
  if (train_rows.empty()) throw DataError("train: the train split is empty");
  const bool have_val = !data.indices(Split::Val).empty();
  TrainResult res;
  Snapshot best = take_snapshot(model_);
  std::size_t since_best = 0;
  auto& shuffle = rng_.get("shuffle");
  for (std::size_t ep = 1; ep <= cfg_.epochs; ++ep) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(train_rows.begin(), train_rows.end(), shuffle);
    Snapshot start = take_snapshot(model_);
    EpochReport rep;
    rep.epoch = ep;
    try {
      rep.train_loss = run_epoch(data, train_rows);
    } catch (const DivergenceError& e) {
      restore_snapshot(model_, start);
      throw DivergenceError(std::string(e.what()) + " in epoch " + std::to_string(ep) +
                            "; parameters restored to the start of the epoch");
    }
    rep.wall_time_s = seconds_since(t0);
    if (have_val) rep.val = evaluate(model_, data, Split::Val, cfg_);
    res.epochs.push_back(rep);
    if (on_epoch) on_epoch(rep);
    const double score = have_val ? rep.val.auc : -rep.train_loss;
    if (res.best_epoch == 0 || score > res.best_val_auc) {
      res.best_epoch = ep;
      res.best_val_auc = score;
      best = take_snapshot(model_);
      since_best = 0;
    } else if (cfg_.patience && ++since_best >= cfg_.patience) {
      break;
    }
  }
  if (res.best_epoch && res.best_epoch != res.epochs.size()) restore_snapshot(model_, best);
  return res;
}

// ---- checkpoint ----

namespace {

struct Entry {
  std::string name;
  std::string kind;
  Tensor* t;
};

std::vector<Entry> checkpoint_entries(Model& model, Adam* opt) {
  std::vector<Entry> es;
  const auto ps = model.parameters();
  for (Parameter* p : ps) es.push_back({p->name, "param", &p->value});
  std::vector<std::pair<std::string, Tensor*>> bufs;
  model.collect_buffers(bufs);
  for (auto& [name, t] : bufs) es.push_back({name, "buffer", t});
  if (opt) {
    for (std::size_t i = 0; i < opt->params().size(); ++i) {
      es.push_back({opt->params()[i]->name, "adam_m", &opt->first_moments()[i]});
      es.push_back({opt->params()[i]->name, "adam_v", &opt->second_moments()[i]});
    }
  }
  return es;
}

constexpr char kMagic[4] = {'D', 'P', 'N', '1'};

}  // namespace

void save_checkpoint(const std::string& path, Model& model, Adam* opt, const RngStreams* rng,
                     const CheckpointExtras& extras) {
  using nlohmann::json;
  const auto es = checkpoint_entries(model, opt);
  json header;
  header["version"] = kCheckpointVersion;
  header["dtype"] = "f64";
  json entries = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : es) {
    entries.push_back({{"name", e.name}, {"kind", e.kind}, {"shape", e.t->shape()}, {"dtype", "f64"}, {"offset", offset}});
    offset += e.t->size() * sizeof(double);
  }
  header["entries"] = entries;
  header["data_bytes"] = offset;
  if (opt) {
    const auto& c = opt->config();
    header["adam"] = {{"steps", opt->steps()}, {"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}};
  }
  if (rng) header["rng"] = {{"seed", rng->seed()}, {"streams", rng->save()}};
  header["config"] = extras.config;
  header["metrics"] = extras.metrics;
  const std::string hs = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("checkpoint: cannot write " + path);
    f.write(kMagic, 4);
    const std::uint64_t len = hs.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof len);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& e : es) {
      f.write(reinterpret_cast<const char*>(e.t->ptr()), static_cast<std::streamsize>(e.t->size() * sizeof(double)));
    }
    if (!f) throw CheckpointError("checkpoint: write failed for " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("checkpoint: cannot move into place " + path);
}

namespace {

nlohmann::json read_header(std::ifstream& f, const std::string& path) {
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw CheckpointError("checkpoint " + path + ": bad magic (not a checkpoint file)");
  }
  std::uint64_t len = 0;
  if (!f.read(reinterpret_cast<char*>(&len), sizeof len)) throw CheckpointError("checkpoint " + path + ": truncated header");
  if (len > (1ULL << 32)) throw CheckpointError("checkpoint " + path + ": implausible header length");
  std::string hs(len, '\0');
  if (!f.read(hs.data(), static_cast<std::streamsize>(len))) throw CheckpointError("checkpoint " + path + ": truncated header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint " + path + ": corrupt header: " + e.what());
  }
  const int version = h.value("version", -1);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint " + path + ": format version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  return h;
}

}  // namespace

nlohmann::json read_checkpoint_header(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open " + path);
  return read_header(f, path);
}

CheckpointExtras load_checkpoint(const std::string& path, Model& model, Adam* opt, RngStreams* rng) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open " + path);
  const auto h = read_header(f, path);
  const std::streamoff data_start = f.tellg();
  f.seekg(0, std::ios::end);
  const std::uint64_t avail = static_cast<std::uint64_t>(f.tellg() - data_start);
  const std::uint64_t need = h.at("data_bytes").get<std::uint64_t>();
  if (avail < need) {
    throw CheckpointError("checkpoint " + path + ": truncated (" + std::to_string(avail) + " of " + std::to_string(need) +
                          " data bytes)");
  }

  std::map<std::pair<std::string, std::string>, nlohmann::json> index;
  for (const auto& e : h.at("entries")) index[{e.at("kind").get<std::string>(), e.at("name").get<std::string>()}] = e;

  // Validate everything before touching the model.
  const auto es = checkpoint_entries(model, opt);
  for (const auto& e : es) {
    auto it = index.find({e.kind, e.name});
    if (it == index.end()) throw CheckpointError("checkpoint " + path + ": missing " + e.kind + " '" + e.name + "'");
    const auto shape = it->second.at("shape").get<Shape>();
    if (shape != e.t->shape()) {
      throw CheckpointError("checkpoint " + path + ": " + e.kind + " '" + e.name + "' has shape " + shape_str(shape) +
                            ", model expects " + shape_str(e.t->shape()));
    }
  }
  std::size_t expected = 0;
  for (const auto& [key, e] : index)
    if (key.first == "param" || key.first == "buffer") ++expected;
  std::size_t have = 0;
  for (const auto& e : es)
    if (e.kind == "param" || e.kind == "buffer") ++have;
  if (expected != have) {
    throw CheckpointError("checkpoint " + path + ": holds " + std::to_string(expected) + " tensors, model has " +
                          std::to_string(have));
  }

  for (const auto& e : es) {
    const auto& j = index.at({e.kind, e.name});
    f.seekg(data_start + static_cast<std::streamoff>(j.at("offset").get<std::uint64_t>()));
    if (!f.read(reinterpret_cast<char*>(e.t->ptr()), static_cast<std::streamsize>(e.t->size() * sizeof(double)))) {
      throw CheckpointError("checkpoint " + path + ": truncated data for '" + e.name + "'");
    }
  }
  if (opt) {
    if (!h.contains("adam")) throw CheckpointError("checkpoint " + path + ": no optimizer state");
    opt->set_steps(h["adam"].at("steps").get<std::uint64_t>());
  }
  if (rng && h.contains("rng")) rng->restore(h["rng"].at("streams").get<std::map<std::string, std::string>>());
  CheckpointExtras ex;
  ex.config = h.value("config", nlohmann::json());
  ex.metrics = h.value("metrics", nlohmann::json());
  return ex;
}

}  // namespace dpn
