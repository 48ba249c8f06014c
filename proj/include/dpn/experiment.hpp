#pragma once

#include <functional>
#include <string>

#include <json.hpp>

#include "dpn/config.hpp"

namespace dpn {

struct RunOutcome {
  TrainResult train;
  EvalReport test;
  /// Generator-side AUC on the test split; NaN for real data.
  double oracle_auc = 0.0;
  std::size_t params = 0;
  std::size_t embedding_params = 0;
  /// Reproducible given the seed; wall times live in `timing`.
  nlohmann::json metrics;
  nlohmann::json timing;
};

/// The model spec with its schema taken from `data`.
ModelSpec bind_schema(ModelSpec spec, const Dataset& data);

/// Builds the model from the "init" stream of the run seed.
std::unique_ptr<Model> build_model(const ModelSpec& spec, std::uint64_t seed);

/// Slice masks on the test split for each "field:threshold" entry.
std::map<std::string, std::vector<bool>> build_slices(const Dataset& data, const std::vector<std::string>& slices);

/// Trains, evaluates the test split and, when `out_dir` is non-empty, writes
/// config.resolved.json, metrics.json, metrics.txt and model.ckpt there.
RunOutcome run_experiment(const RunConfig& cfg, const Dataset& data, const std::string& out_dir = {},
                          const std::function<void(const EpochReport&)>& on_epoch = {});

struct BenchRow {
  std::string name;
  std::size_t params = 0;
  std::size_t analytic_params = 0;
  double seconds_per_epoch = 0.0;
};

/// Times one training epoch per repeat for each listed model (median reported).
std::vector<BenchRow> run_bench(const RunConfig& cfg, const Dataset& data);
std::string bench_table(const std::vector<BenchRow>& rows);

}  // namespace dpn
