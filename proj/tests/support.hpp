#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "fvlfp/encoder.hpp"
#include "fvlfp/graph.hpp"
#include "fvlfp/harness.hpp"
#include "fvlfp/tensor.hpp"

namespace testing {

using fvlfp::num::Graph;
using fvlfp::num::Tensor;
using fvlfp::num::Var;

inline Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double sd = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, sd);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

// A small tower that keeps graph tests fast.
inline fvlfp::harness::Config small_config() {
  fvlfp::harness::Config c;
  c.dim = 16;
  c.layers = 3;
  c.heads = 2;
  c.image_size = 16;
  c.patch_size = 8;
  c.n_train = 400;
  c.n_test = 80;
  c.n_val = 40;
  c.align_samples = 300;
  c.clients = 3;
  c.rounds = 2;
  c.local_steps = 3;
  c.refine_steps = 3;
  c.fglobal_eval = 60;
  c.lr = 0.01;
  c.refine_lr = 0.01;
  return c;
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst = 0.0;
};

// Relative error with a small absolute floor, so coordinates whose true
// gradient is ~0 are judged on absolute error instead.
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) / scale;
}

// Central differences on `samples` coordinates drawn across every tensor of
// `params`. `loss` rebuilds the graph from the (perturbed) parameter set and
// returns the scalar output.
inline GradCheck check_gradients(std::vector<Tensor> params,
                                 const std::function<Var(Graph&, const std::vector<Var>&)>& loss,
                                 std::size_t samples, std::uint64_t seed, double step = 1e-3,
                                 double tol = 1e-4) {
  Graph g;
  std::vector<Var> vars;
  for (const auto& p : params) vars.push_back(g.parameter(p));
  const auto grads = g.backward(loss(g, vars));

  auto evaluate = [&](const std::vector<Tensor>& ps) {
    Graph h;
    std::vector<Var> vs;
    for (const auto& p : ps) vs.push_back(h.constant(p));
    return h.value(loss(h, vs)).item();
  };

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < params.size(); ++t)
    for (std::size_t j = 0; j < params[t].size(); ++j) coords.emplace_back(t, j);
  std::mt19937_64 rng(seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  // Spread the sample over every tensor before filling up at random.
  std::vector<std::pair<std::size_t, std::size_t>> picked;
  std::vector<bool> seen(params.size(), false);
  for (const auto& c : coords) {
    if (!seen[c.first]) {
      seen[c.first] = true;
      picked.push_back(c);
    }
  }
  for (const auto& c : coords) {
    if (picked.size() >= samples) break;
    if (std::find(picked.begin(), picked.end(), c) == picked.end()) picked.push_back(c);
  }

  GradCheck out;
  for (const auto& [t, j] : picked) {
    auto plus = params, minus = params;
    plus[t][j] += step;
    minus[t][j] -= step;
    const double numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * step);
    const double err = relative_error(grads[t][j], numeric);
    out.worst = std::max(out.worst, err);
    ++out.checked;
    if (err > tol) ++out.failed;
  }
  return out;
}

}  // namespace testing
