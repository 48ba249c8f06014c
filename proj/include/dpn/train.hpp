#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpn/data.hpp"
#include "dpn/metrics.hpp"
#include "dpn/model.hpp"
#include "dpn/optim.hpp"
#include "dpn/rng.hpp"

namespace dpn {

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 256;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  Precision precision = Precision::F64;
  /// Epochs without a validation AUC improvement before stopping; 0 disables.
  std::size_t patience = 3;
  /// Evaluation workers.
  std::size_t threads = 1;
};

/// Throws ConfigError on a bad combination with `model`.
void validate(const TrainConfig& cfg, Model& model);

struct EpochReport {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  EvalReport val;
  double wall_time_s = 0.0;
};

struct TrainResult {
  std::vector<EpochReport> epochs;
  /// 1-based epoch whose parameters the model holds on return.
  std::size_t best_epoch = 0;
  double best_val_auc = 0.0;
};

/// Sigmoid outputs over `rows`, computed in eval mode.
std::vector<double> predict(Model& model, const Dataset& data, std::span<const std::size_t> rows,
                            std::size_t batch_size = 1024, Precision precision = Precision::F64,
                            std::size_t threads = 1);

/// AUC and logloss of one split. Slices are given as masks aligned with the split's rows.
EvalReport evaluate(Model& model, const Dataset& data, Split split, const TrainConfig& cfg,
                    const std::map<std::string, std::vector<bool>>& slices = {});

/// Parameter and buffer values, used for best-epoch selection and rollback.
struct Snapshot {
  std::vector<Tensor> params;
  std::vector<Tensor> buffers;
};
Snapshot take_snapshot(Model& model);
void restore_snapshot(Model& model, const Snapshot& s);

/// Adam on mean logloss with shuffled mini-batches from the "shuffle" stream.
/// The model ends on its best-validation epoch. A non-finite loss restores the
/// state at the start of the failing epoch and throws DivergenceError.
class Trainer {
 public:
  Trainer(Model& model, const TrainConfig& cfg);

  TrainResult fit(const Dataset& data, const std::function<void(const EpochReport&)>& on_epoch = {});
  /// One pass over `rows` in the given order; returns the mean batch loss.
  double run_epoch(const Dataset& data, std::span<const std::size_t> rows);

  Adam& optimizer() { return opt_; }
  RngStreams& rng() { return rng_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  Model& model_;
  TrainConfig cfg_;
  Adam opt_;
  RngStreams rng_;
};

// Checkpoint file: "DPN1", uint64 LE header length, JSON header, raw LE f64 arrays.
inline constexpr int kCheckpointVersion = 1;

struct CheckpointExtras {
  nlohmann::json config;   ///< resolved run config (rebuilds the model)
  nlohmann::json metrics;  ///< metrics snapshot
};

void save_checkpoint(const std::string& path, Model& model, Adam* opt, const RngStreams* rng,
                     const CheckpointExtras& extras);
/// Reads only the header.
nlohmann::json read_checkpoint_header(const std::string& path);
/// Loads values into an already-built model (and optimizer / streams when given).
/// Names and shapes must match exactly.
CheckpointExtras load_checkpoint(const std::string& path, Model& model, Adam* opt = nullptr, RngStreams* rng = nullptr);

}  // namespace dpn
