#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dpn/autograd.hpp"

namespace dpn {

struct GradCheckResult {
  /// max |analytic - central difference| / max(1, |analytic|)
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose +-h probe changes a relu/clamp region.
  std::size_t skipped = 0;
  bool finite = true;

  bool passed(double tol) const { return finite && checked > 0 && max_rel_error < tol; }
};

/// Non-scalar outputs are contracted with a fixed pseudo-random vector.
using TensorFn = std::function<Var(Graph&, Var)>;
using ParamFn = std::function<Var(Graph&)>;

GradCheckResult grad_check(const TensorFn& f, const Tensor& x, double h = 1e-5);

/// Checks the gradient with respect to every parameter in `params`. When
/// `max_coords_per_param` is nonzero, a seeded sample of coordinates is probed.
GradCheckResult grad_check_params(const ParamFn& f, const std::vector<Parameter*>& params, double h = 1e-5,
                                  std::size_t max_coords_per_param = 0, std::uint64_t seed = 0);

}  // namespace dpn
