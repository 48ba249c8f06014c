#include "dpn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "dpn/error.hpp"

namespace dpn {

double auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("auc: " + std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) +
                         " labels");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of average ranks of the positives.
  double rank_sum = 0.0;
  double pos = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] > 0.5) {
        rank_sum += avg_rank;
        pos += 1.0;
      }
    }
    i = j;
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) throw MetricError("auc: undefined without both positive and negative labels");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double logloss(std::span<const double> probs, std::span<const double> labels) {
  if (probs.size() != labels.size()) throw DimensionError("logloss: length mismatch");
  if (probs.empty()) throw MetricError("logloss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kProbClip, 1.0 - kProbClip);
    s -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  return s / static_cast<double>(probs.size());
}

SliceMetrics slice_metrics(std::span<const double> probs, std::span<const double> labels,
                           const std::vector<bool>& mask) {
  std::vector<double> p, y;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (mask[i]) {
      p.push_back(probs[i]);
      y.push_back(labels[i]);
    }
  }
  SliceMetrics m;
  m.n = p.size();
  if (p.empty()) {
    m.auc_defined = false;
    return m;
  }
  m.logloss = logloss(p, y);
  try {
    m.auc = auc(p, y);
  } catch (const MetricError&) {
    m.auc_defined = false;
  }
  return m;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j{{"auc", auc}, {"logloss", logloss}, {"n", n}, {"params", params}, {"wall_time_s", wall_time_s}};
  nlohmann::json s = nlohmann::json::object();
  for (const auto& [name, m] : slices) {
    s[name] = {{"auc", m.auc_defined ? nlohmann::json(m.auc) : nlohmann::json(nullptr)},
               {"logloss", m.logloss},
               {"n", m.n}};
  }
  j["slices"] = s;
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.auc = j.at("auc").get<double>();
  r.logloss = j.at("logloss").get<double>();
  r.n = j.at("n").get<std::size_t>();
  r.params = j.value("params", std::size_t{0});
  r.wall_time_s = j.value("wall_time_s", 0.0);
  if (j.contains("slices")) {
    for (const auto& [name, s] : j.at("slices").items()) {
      SliceMetrics m;
      m.auc_defined = !s.at("auc").is_null();
      m.auc = m.auc_defined ? s.at("auc").get<double>() : 0.0;
      m.logloss = s.at("logloss").get<double>();
      m.n = s.at("n").get<std::size_t>();
      r.slices[name] = m;
    }
  }
  return r;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(24) << "slice" << std::right << std::setw(10) << "auc" << std::setw(10) << "logloss"
     << std::setw(10) << "n" << '\n';
  auto row = [&](const std::string& name, bool defined, double a, double l, std::size_t cnt) {
    os << std::left << std::setw(24) << name << std::right << std::fixed << std::setprecision(4) << std::setw(10);
    if (defined) {
      os << a;
    } else {
      os << "n/a";
    }
    os << std::setw(10) << l << std::setw(10) << cnt << '\n';
  };
  row("all", true, auc, logloss, n);
  for (const auto& [name, m] : slices) row(name, m.auc_defined, m.auc, m.logloss, m.n);
  os << "params " << params << ", wall time " << std::setprecision(2) << wall_time_s << " s\n";
  return os.str();
}

}  // namespace dpn
