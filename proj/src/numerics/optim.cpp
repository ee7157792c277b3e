#include "fvlfp/optim.hpp"

#include <cmath>

#include "fvlfp/error.hpp"

namespace fvlfp::num {

void adamw_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                OptimizerState& state, const AdamWHyper& hyper) {
  if (!(hyper.lr > 0.0)) throw Error("adamw_step: learning rate must be positive");
  if (params.size() != grads.size()) throw DimensionError("adamw_step: params/grads count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i])) {
      throw DimensionError("adamw_step: gradient " + std::to_string(i) + " has shape " +
                           grads[i].shape_string() + ", parameter " + params[i].shape_string());
    }
    if (!grads[i].all_finite()) throw NumericError("adamw_step: non-finite gradient");
  }
  if (!state.initialized()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.shape());
      state.second_moment.emplace_back(p.shape());
    }
    state.step = 0;
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adamw_step: optimizer state does not match parameters");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  const double decay = 1.0 - hyper.lr * hyper.weight_decay;

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    const Tensor& g = grads[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
      v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] = p[j] * decay - hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
  }
}

}  // namespace fvlfp::num
