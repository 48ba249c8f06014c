#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dpn/tensor.hpp"

namespace dpn {

/// Outcome of one property check: worst observed error against a pinned bound.
struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double threshold = 0.0;
  bool passed = false;
  std::size_t instances = 0;
  std::string detail;
};

struct OracleOptions {
  std::uint64_t seed = 20240601;
  /// Perturb the layer under test after its reference copy is taken, so the
  /// identity checks must fail.
  bool inject_fault = false;
};

// Identity checks. Each reference side is evaluated with plain loops over
// raw parameter values, independent of the autograd ops.
CheckResult check_affine_expansion(const OracleOptions& opt, std::size_t instances = 100);
CheckResult check_cross_degeneration(const OracleOptions& opt, std::size_t instances = 100);
CheckResult check_fm_degeneration(const OracleOptions& opt, std::size_t instances = 100);
CheckResult check_homo_expansion(const OracleOptions& opt, std::size_t instances = 50);
CheckResult check_hetero_expansion(const OracleOptions& opt, std::size_t instances = 100);
CheckResult check_multihead_single(const OracleOptions& opt);

// Other oracles.
CheckResult check_auc_bruteforce(const OracleOptions& opt, std::size_t sets = 200, std::size_t points = 50);
CheckResult check_adam_trace(const OracleOptions& opt, std::size_t steps = 10);
CheckResult check_fm_square_identity(const OracleOptions& opt, std::size_t instances = 100);

/// Finite-difference check of one layer type over `seeds` random instances.
struct GradCase {
  std::string name;
  /// Returns the max relative error for one seed, or a negative value when no
  /// coordinate could be probed.
  std::function<double(std::uint64_t seed)> run;
};
std::vector<GradCase> gradcheck_cases();
CheckResult run_gradcase(const GradCase& gc, std::size_t seeds = 20, double tol = 1e-4);

/// O(n^2) pairwise AUC with ties counted 0.5.
double auc_pairwise(const std::vector<double>& scores, const std::vector<double>& labels);

std::vector<CheckResult> run_suite(const std::string& suite, const OracleOptions& opt);

}  // namespace dpn
