#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace dpn {

/// Mann-Whitney AUC with tied scores credited 0.5; O(n log n).
double auc(std::span<const double> scores, std::span<const double> labels);

/// Mean binary cross-entropy with probabilities clipped to [1e-7, 1 - 1e-7].
double logloss(std::span<const double> probs, std::span<const double> labels);

inline constexpr double kProbClip = 1e-7;

struct SliceMetrics {
  double auc = 0.0;
  double logloss = 0.0;
  std::size_t n = 0;
  /// AUC is undefined when the slice holds a single class.
  bool auc_defined = true;
};

struct EvalReport {
  double auc = 0.0;
  double logloss = 0.0;
  std::size_t n = 0;
  std::size_t params = 0;
  double wall_time_s = 0.0;
  std::map<std::string, SliceMetrics> slices;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  /// Aligned-column table.
  std::string to_text() const;
};

/// Metrics over rows selected by `mask`.
SliceMetrics slice_metrics(std::span<const double> probs, std::span<const double> labels,
                           const std::vector<bool>& mask);

}  // namespace dpn
