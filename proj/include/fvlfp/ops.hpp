#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "fvlfp/graph.hpp"

// Differentiable kernels recorded on a Graph. Matrices are row-major; "rows"
// ops treat each row of a rank-2 tensor independently and return a rank-1
// tensor with one entry per row.
namespace fvlfp::num::ops {

Var matmul(Graph& g, Var a, Var b);
// a * b^T
Var matmul_nt(Graph& g, Var a, Var b);
// x * w + bias (bias broadcast over rows; pass an invalid Var for none).
Var linear(Graph& g, Var x, Var w, Var bias = {});

Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double s);
Var add_scalar(Graph& g, Var a, double s);
// Adds a rank-1 `row` to every row of `x`.
Var add_row(Graph& g, Var x, Var row);

Var sum(Graph& g, Var a);
Var mean(Graph& g, Var a);

// axis 1: along each row; axis 0: down each column. Rank-1 inputs use axis 0.
Var softmax(Graph& g, Var a, int axis);
Var log_softmax(Graph& g, Var a, int axis);

Var layernorm(Graph& g, Var x, Var gain, Var bias, double eps);
Var gelu(Graph& g, Var x);
Var log(Graph& g, Var a);
Var abs(Graph& g, Var a);
// max(0, a - margin) elementwise.
Var hinge(Graph& g, Var a, double margin);

Var l2_normalize_rows(Graph& g, Var x);
Var row_dot(Graph& g, Var a, Var b);
Var cosine_rows(Graph& g, Var a, Var b);
// x (r x c) times vector v (c) -> r
Var matvec(Graph& g, Var x, Var v);

Var transpose(Graph& g, Var a);
Var reshape(Graph& g, Var a, std::vector<std::size_t> shape);

// Row gather across several sources: output row i copies row
// `map[i].second` of source `map[i].first`. Covers concat, slice, broadcast
// and scatter-back of sequence pieces; gradients are scattered back.
using RowRef = std::pair<std::size_t, std::size_t>;
Var gather_rows(Graph& g, const std::vector<Var>& sources, std::vector<RowRef> map);
Var slice_rows(Graph& g, Var a, std::size_t begin, std::size_t count);
Var concat_rows(Graph& g, const std::vector<Var>& parts);
// Concatenates rank-1 vectors (each of length r) or r x c_i matrices column-wise.
Var concat_cols(Graph& g, const std::vector<Var>& parts);
Var column(Graph& g, Var a, std::size_t j);
// Picks a[i, index[i]] for every row i.
Var pick(Graph& g, Var a, std::vector<std::size_t> index);

// (n*group) x d -> n x d, mean over each consecutive block of `group` rows.
Var mean_row_groups(Graph& g, Var x, std::size_t group);
// Scales block i of `group` rows of x by s[i].
Var scale_row_groups(Graph& g, Var x, Var s, std::size_t group);

// Multi-head self-attention over `batch` independent sequences of length
// `seq`. qkv holds (batch*seq) rows of [q | k | v], each of width d; the
// result is (batch*seq) x d with heads laid out contiguously.
Var attention(Graph& g, Var qkv, std::size_t batch, std::size_t seq, std::size_t heads);

}  // namespace fvlfp::num::ops
