#pragma once

#include <cstdint>
#include <vector>

#include "fvlfp/tensor.hpp"

namespace fvlfp::num {

struct AdamWHyper {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  bool initialized() const noexcept { return !first_moment.empty(); }
};

// One AdamW update in place. Weight decay is decoupled: parameters shrink by
// lr * weight_decay before the bias-corrected Adam step. A fresh state is
// sized from `params` on first use.
void adamw_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                OptimizerState& state, const AdamWHyper& hyper);

}  // namespace fvlfp::num
