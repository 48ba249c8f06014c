#include "dpn/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "dpn/error.hpp"

namespace dpn {

ModelSpec bind_schema(ModelSpec spec, const Dataset& data) {
  spec.schema = data.schema;
  if (spec.family == Family::Sdpn && data.seq_len == 0) {
    throw ConfigError("model family sdpn needs a dataset with behavior sequences");
  }
  return spec;
}

std::unique_ptr<Model> build_model(const ModelSpec& spec, std::uint64_t seed) {
  RngStreams streams(seed);
  return std::make_unique<Model>(spec, streams.get("init"));
}

std::map<std::string, std::vector<bool>> build_slices(const Dataset& data, const std::vector<std::string>& slices) {
  std::map<std::string, std::vector<bool>> out;
  for (const auto& s : slices) {
    const auto [field, th] = parse_slice(s);
    std::ostringstream name;
    name << field << '<' << th;
    out[name.str()] = slice_by_frequency(data, field, th);
  }
  return out;
}

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p);
  if (!f) throw ConfigError("cannot write " + p.string());
  f << s;
}

}  // namespace

RunOutcome run_experiment(const RunConfig& cfg, const Dataset& data, const std::string& out_dir,
                          const std::function<void(const EpochReport&)>& on_epoch) {
  namespace fs = std::filesystem;
  RunConfig resolved = cfg;
  resolved.model = bind_schema(cfg.model, data);
  auto slices = build_slices(data, cfg.slices);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "config.resolved.json", to_json(resolved).dump(2) + "\n");
  }
  auto model = build_model(resolved.model, cfg.train.seed);
  Trainer trainer(*model, cfg.train);
  RunOutcome o;
  try {
    o.train = trainer.fit(data, on_epoch);
  } catch (const DivergenceError&) {
    if (!out_dir.empty()) {
      save_checkpoint((fs::path(out_dir) / "last_finite.ckpt").string(), *model, &trainer.optimizer(), &trainer.rng(),
                      {to_json(resolved), nlohmann::json::object()});
    }
    throw;
  }
  o.test = evaluate(*model, data, Split::Test, cfg.train, slices);
  o.params = model->dense_param_count();
  o.embedding_params = model->embedding_param_count();
  o.oracle_auc = data.oracle.empty() ? std::numeric_limits<double>::quiet_NaN() : oracle_auc(data, Split::Test);

  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : o.train.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val", e.val.to_json()}, {"wall_time_s", e.wall_time_s}});
  }
  auto& m = o.metrics;
  m["name"] = cfg.name;
  m["epochs"] = epochs;
  m["best_epoch"] = o.train.best_epoch;
  m["test"] = o.test.to_json();
  m["params"] = o.params;
  m["embedding_params"] = o.embedding_params;
  m["oracle_auc"] = std::isnan(o.oracle_auc) ? nlohmann::json(nullptr) : nlohmann::json(o.oracle_auc);
  // Wall times go to timing.json so metrics.json is reproducible byte for byte.
  nlohmann::json timing = {{"test_eval_s", o.test.wall_time_s}, {"epochs", nlohmann::json::array()}};
  m["test"].erase("wall_time_s");
  for (std::size_t i = 0; i < m["epochs"].size(); ++i) {
    auto& e = m["epochs"][i];
    timing["epochs"].push_back({{"train_s", e["wall_time_s"]}, {"val_s", e["val"]["wall_time_s"]}});
    e.erase("wall_time_s");
    e["val"].erase("wall_time_s");
  }
  o.timing = timing;

  if (!out_dir.empty()) {
    write_text(fs::path(out_dir) / "metrics.json", m.dump(2) + "\n");
    write_text(fs::path(out_dir) / "timing.json", timing.dump(2) + "\n");
    std::ostringstream txt;
    txt << "run " << cfg.name << ", best epoch " << o.train.best_epoch << "\n";
    txt << std::left << std::setw(8) << "epoch" << std::right << std::setw(12) << "train_loss" << std::setw(10) << "val_auc"
        << std::setw(10) << "seconds" << '\n';
    for (const auto& e : o.train.epochs) {
      txt << std::left << std::setw(8) << e.epoch << std::right << std::fixed << std::setprecision(4) << std::setw(12)
          << e.train_loss << std::setw(10) << e.val.auc << std::setprecision(2) << std::setw(10) << e.wall_time_s << '\n';
    }
    txt << "\ntest\n" << o.test.to_text();
    if (!std::isnan(o.oracle_auc)) txt << "oracle auc " << std::setprecision(4) << o.oracle_auc << '\n';
    write_text(fs::path(out_dir) / "metrics.txt", txt.str());
    save_checkpoint((fs::path(out_dir) / "model.ckpt").string(), *model, &trainer.optimizer(), &trainer.rng(),
                    {to_json(resolved), m});
  }
  return o;
}

std::vector<BenchRow> run_bench(const RunConfig& cfg, const Dataset& data) {
  std::vector<BenchRow> rows;
  auto train_rows = data.indices(Split::Train);
  if (cfg.bench.rows && cfg.bench.rows < train_rows.size()) train_rows.resize(cfg.bench.rows);
  for (const auto& bm : cfg.bench.models) {
    BenchRow r;
    r.name = bm.name;
    auto model = build_model(bind_schema(bm.model, data), cfg.train.seed);
    r.params = model->dense_param_count();
    r.analytic_params = model->analytic_param_count();
    std::vector<double> times;
    for (std::size_t k = 0; k < std::max<std::size_t>(1, cfg.bench.repeats); ++k) {
      Trainer t(*model, cfg.train);
      const auto t0 = std::chrono::steady_clock::now();
      t.run_epoch(data, train_rows);
      times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(times.begin(), times.end());
    r.seconds_per_epoch = times[times.size() / 2];
    rows.push_back(r);
  }
  return rows;
}

std::string bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(36) << "model" << std::right << std::setw(12) << "params" << std::setw(14) << "sec/epoch" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(36) << r.name << std::right << std::setw(12) << r.params << std::fixed << std::setprecision(3)
       << std::setw(14) << r.seconds_per_epoch << '\n';
  }
  return os.str();
}

}  // namespace dpn
