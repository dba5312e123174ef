#pragma once

#include <cstddef>
#include <vector>

#include "attnflow/param.hpp"

namespace attnflow {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.8;
  double beta2 = 0.8;
  double eps = 1e-4;
  double weight_decay = 1e-5;  // L2 term added to the gradient
};

class Adam {
 public:
  Adam(ParamList params, const AdamConfig& cfg);

  void step();
  void zero_grad() { zero_grads(params_); }
  std::size_t steps() const noexcept { return t_; }

 private:
  ParamList params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace attnflow
