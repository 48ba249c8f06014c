#include "dpn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dpn/ops.hpp"

namespace dpn {

namespace {

Var to_scalar(Graph& g, Var y) {
  if (y.value().size() == 1) return y;
  Tensor w(y.shape());
  std::mt19937_64 rng(0x9c3f1d2bULL + w.size());
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (double& v : w.data()) v = u(rng);
  return sum_all(mul(y, g.constant(std::move(w))));
}

struct Probe {
  double value;
  std::uint64_t signature;
};

template <class Eval>
void probe_coordinate(Eval&& eval, double& slot, double analytic, double h, std::uint64_t base_sig,
                      GradCheckResult& r) {
  const double keep = slot;
  slot = keep + h;
  const Probe up = eval();
  slot = keep - h;
  const Probe dn = eval();
  slot = keep;
  if (!std::isfinite(up.value) || !std::isfinite(dn.value)) {
    r.finite = false;
    return;
  }
  if (up.signature != base_sig || dn.signature != base_sig) {
    ++r.skipped;
    return;
  }
  const double fd = (up.value - dn.value) / (2.0 * h);
  const double err = std::abs(analytic - fd) / std::max(1.0, std::abs(analytic));
  r.max_rel_error = std::max(r.max_rel_error, err);
  ++r.checked;
}

}  // namespace

GradCheckResult grad_check(const TensorFn& f, const Tensor& x, double h) {
  GradCheckResult r;
  Tensor analytic;
  std::uint64_t base_sig = 0;
  {
    Graph g;
    g.set_track_regions(true);
    Var xv = g.leaf(x);
    Var loss = to_scalar(g, f(g, xv));
    base_sig = g.region_signature();
    if (!std::isfinite(loss.value().item())) {
      r.finite = false;
      return r;
    }
    g.backward(loss);
    analytic = g.grad(xv);
  }
  Tensor probe_x = x;
  auto eval = [&]() {
    Graph g;
    g.set_track_regions(true);
    Var loss = to_scalar(g, f(g, g.constant(probe_x)));
    return Probe{loss.value().item(), g.region_signature()};
  };
  for (std::size_t i = 0; i < x.size() && r.finite; ++i) {
    probe_coordinate(eval, probe_x[i], analytic[i], h, base_sig, r);
  }
  return r;
}

GradCheckResult grad_check_params(const ParamFn& f, const std::vector<Parameter*>& params, double h,
                                  std::size_t max_coords_per_param, std::uint64_t seed) {
  GradCheckResult r;
  std::uint64_t base_sig = 0;
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    g.set_track_regions(true);
    Var loss = to_scalar(g, f(g));
    base_sig = g.region_signature();
    if (!std::isfinite(loss.value().item())) {
      r.finite = false;
      return r;
    }
    g.backward(loss);
  }
  std::vector<Tensor> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);
  auto eval = [&]() {
    Graph g;
    g.set_track_regions(true);
    Var loss = to_scalar(g, f(g));
    return Probe{loss.value().item(), g.region_signature()};
  };
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < params.size() && r.finite; ++k) {
    Parameter& p = *params[k];
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords_per_param && coords.size() > max_coords_per_param) {
      // Prefer coordinates that actually carry gradient (embedding rows in the batch).
      std::stable_partition(coords.begin(), coords.end(), [&](std::size_t i) { return analytic[k][i] != 0.0; });
      const auto nz = static_cast<std::size_t>(
          std::count_if(coords.begin(), coords.end(), [&](std::size_t i) { return analytic[k][i] != 0.0; }));
      const std::size_t pool = std::max(nz, max_coords_per_param);
      std::shuffle(coords.begin(), coords.begin() + static_cast<std::ptrdiff_t>(std::min(pool, coords.size())), rng);
      coords.resize(max_coords_per_param);
    }
    for (std::size_t i : coords) {
      if (!r.finite) break;
      probe_coordinate(eval, p.value[i], analytic[k][i], h, base_sig, r);
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return r;
}

}  // namespace dpn
