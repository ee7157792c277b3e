#pragma once

#include <vector>

#include "fvlfp/graph.hpp"
#include "fvlfp/tensor.hpp"

// Cross-layer demographic prompting: the learnable residual that mixes
// earlier prompt states into the current layer's prompt slice.
//
// The graph versions work on stacked batches: a prompt state is
// (n*K) x d, n samples with K token rows each. A single sample is n = 1.
namespace fvlfp::cdfp {

using num::Graph;
using num::Tensor;
using num::Var;

// h = mean of the K token rows: (n*K) x d -> n x d.
Var contextualize(Graph& g, Var state, std::size_t tokens);

// gamma_i = softmax_i(query . h_i) for every sample: n x history_len.
Var gap_weights(Graph& g, Var query, const std::vector<Var>& contexts);

// sum_i gamma[:, i] * history_i, per sample: (n*K) x d.
Var gap_pool(Graph& g, Var gamma, const std::vector<Var>& history, std::size_t tokens);

// P' = P + gap_pool(gap_weights(query, contextualize(history)), history).
Var apply_cross_layer(Graph& g, Var prompt, const std::vector<Var>& history, Var query,
                      std::size_t tokens);

// Single-sample tensor forms.
Tensor contextualize(const Tensor& state);
Tensor gap_weights(const Tensor& query, const std::vector<Tensor>& contexts);
Tensor gap_pool(const Tensor& gamma, const std::vector<Tensor>& history);
Tensor apply_cross_layer(const Tensor& prompt, const std::vector<Tensor>& history, const Tensor& query);

}  // namespace fvlfp::cdfp
