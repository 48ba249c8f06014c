#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "dpn/data.hpp"
#include "dpn/model.hpp"
#include "dpn/train.hpp"

namespace dpn {

struct DataConfig {
  /// "csv", "dataset" (processed directory), "synth_multiplicative" or "synth_sequence".
  std::string source = "synth_multiplicative";
  /// Relative paths resolve against DPN_DATA_DIR when it is set.
  std::string path;
  IngestOptions ingest;
  SynthMultiplicativeConfig multiplicative;
  SynthSequenceConfig sequence;
};

struct BenchModel {
  std::string name;
  ModelSpec model;  ///< schema filled in from the data
};

struct BenchConfig {
  std::vector<BenchModel> models;
  /// Train rows timed per epoch (0 = the whole train split).
  std::size_t rows = 0;
  std::size_t repeats = 1;
};

/// One experiment: data source, model, optimizer settings and output directory.
struct RunConfig {
  std::string name = "run";
  DataConfig data;
  ModelSpec model;  ///< schema filled in from the data
  TrainConfig train;
  std::string out = "runs/run";
  /// Evaluation slices "field:threshold" reported on the test split.
  std::vector<std::string> slices;
  BenchConfig bench;
};

/// Strict parse: unknown keys and wrong types raise ConfigError with the key path.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
/// Fully resolved form (every default spelled out); parses back to the same config.
nlohmann::json to_json(const RunConfig& c);

ModelSpec parse_model_spec(const nlohmann::json& j, const std::string& where = "model");
nlohmann::json to_json(const ModelSpec& m);
nlohmann::json to_json(const GeneratorSpec& g);
GeneratorSpec parse_generator_spec(const nlohmann::json& j, const std::string& where);
nlohmann::json to_json(const FieldSchema& s);
FieldSchema parse_schema(const nlohmann::json& j);

/// `path` joined to DPN_DATA_DIR when relative and the variable is set.
std::string resolve_data_path(const std::string& path);
/// Builds or loads the dataset; missing files raise ConfigError naming the path.
Dataset load_data(const DataConfig& d);

/// "field:threshold" -> (field, threshold); the threshold may be "inf".
std::pair<std::string, double> parse_slice(const std::string& s);

}  // namespace dpn
