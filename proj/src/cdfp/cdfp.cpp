#include "fvlfp/cdfp.hpp"

#include "fvlfp/error.hpp"
#include "fvlfp/ops.hpp"

namespace fvlfp::cdfp {

namespace ops = num::ops;

Var contextualize(Graph& g, Var state, std::size_t tokens) {
  if (tokens == 0) throw DimensionError("contextualize: prompt state has no token rows");
  return ops::mean_row_groups(g, state, tokens);
}

Var gap_weights(Graph& g, Var query, const std::vector<Var>& contexts) {
  if (contexts.empty()) throw DimensionError("gap_weights: empty prompt history");
  std::vector<Var> logits;
  logits.reserve(contexts.size());
  for (auto h : contexts) logits.push_back(ops::matvec(g, h, query));
  return ops::softmax(g, ops::concat_cols(g, logits), 1);
}

Var gap_pool(Graph& g, Var gamma, const std::vector<Var>& history, std::size_t tokens) {
  const Tensor& w = g.value(gamma);
  if (w.rank() != 2 || w.cols() != history.size()) {
    throw DimensionError("gap_pool: " + std::to_string(w.cols()) + " weights for " +
                         std::to_string(history.size()) + " history entries");
  }
  Var pooled;
  for (std::size_t i = 0; i < history.size(); ++i) {
    Var term = ops::scale_row_groups(g, history[i], ops::column(g, gamma, i), tokens);
    pooled = pooled.valid() ? ops::add(g, pooled, term) : term;
  }
  return pooled;
}

Var apply_cross_layer(Graph& g, Var prompt, const std::vector<Var>& history, Var query,
                      std::size_t tokens) {
  if (history.empty()) throw DimensionError("apply_cross_layer: layer 0 has no history");
  std::vector<Var> contexts;
  contexts.reserve(history.size());
  for (auto h : history) contexts.push_back(contextualize(g, h, tokens));
  Var gamma = gap_weights(g, query, contexts);
  return ops::add(g, prompt, gap_pool(g, gamma, history, tokens));
}

namespace {

std::vector<Var> constants(Graph& g, const std::vector<Tensor>& ts) {
  std::vector<Var> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.push_back(g.constant(t));
  return out;
}

}  // namespace

Tensor contextualize(const Tensor& state) {
  Graph g;
  return g.value(contextualize(g, g.constant(state), state.rows()));
}

Tensor gap_weights(const Tensor& query, const std::vector<Tensor>& contexts) {
  Graph g;
  std::vector<Tensor> rows;
  for (const auto& c : contexts) rows.push_back(c.reshaped({1, c.size()}));
  const Tensor w = g.value(gap_weights(g, g.constant(query), constants(g, rows)));
  return w.reshaped({w.size()});
}

Tensor gap_pool(const Tensor& gamma, const std::vector<Tensor>& history) {
  if (history.empty()) throw DimensionError("gap_pool: empty prompt history");
  if (gamma.size() != history.size()) {
    throw DimensionError("gap_pool: " + std::to_string(gamma.size()) + " weights for " +
                         std::to_string(history.size()) + " history entries");
  }
  Graph g;
  Var w = g.constant(gamma.reshaped({1, gamma.size()}));
  return g.value(gap_pool(g, w, constants(g, history), history.front().rows()));
}

Tensor apply_cross_layer(const Tensor& prompt, const std::vector<Tensor>& history, const Tensor& query) {
  Graph g;
  return g.value(apply_cross_layer(g, g.constant(prompt), constants(g, history), g.constant(query),
                                   prompt.rows()));
}

}  // namespace fvlfp::cdfp
