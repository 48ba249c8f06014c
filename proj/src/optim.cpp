#include "dpn/optim.hpp"

#include <cmath>

#include "dpn/error.hpp"

namespace dpn {

Adam::Adam(std::vector<Parameter*> params, const AdamConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg.lr >= 0.0)) throw ConfigError("adam: lr must be >= 0");
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
    if (p->grad.shape() != p->value.shape()) p->grad = Tensor(p->value.shape());
  }
}

void Adam::step() {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  auto update = [&](Parameter& p, Tensor& m, Tensor& v, std::size_t begin, std::size_t end) {
    double* w = p.value.ptr();
    const double* g = p.grad.ptr();
    double* mp = m.ptr();
    double* vp = v.ptr();
    for (std::size_t i = begin; i < end; ++i) {
      mp[i] = b1 * mp[i] + (1.0 - b1) * g[i];
      vp[i] = b2 * vp[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = mp[i] / c1;
      const double vhat = vp[i] / c2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  };
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    if (p.sparse) {
      const std::size_t w = p.row_width();
      for (std::size_t r : p.touched_rows) update(p, m_[k], v_[k], r * w, (r + 1) * w);
    } else {
      update(p, m_[k], v_[k], 0, p.value.size());
    }
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

}  // namespace dpn
