#pragma once

#include <cstdint>
#include <vector>

#include "dpn/autograd.hpp"

namespace dpn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Row-sparse parameters are updated lazily: only
/// rows touched since the last step move, and only their moments decay; the
/// bias correction uses the global step count.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, const AdamConfig& cfg);

  void step();
  void zero_grad();

  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const std::vector<Parameter*>& params() const { return params_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace dpn
