#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "fvlfp/tensor.hpp"

namespace fvlfp::num {

// Handle to a value recorded on a Graph.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const noexcept { return id != std::numeric_limits<std::uint32_t>::max(); }
};

// Reverse-mode tape. Values are recorded in execution order, so the node list
// is already topologically sorted. Constants carry no gradient; only tensors
// registered through parameter() are trainable leaves.
//
// One Graph belongs to one thread.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool any_requires_grad(std::initializer_list<Var> vars) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t parameter_count() const noexcept { return leaves_.size(); }
  Var parameter_at(std::size_t i) const { return leaves_.at(i); }

  // Records an op result. `backward` is dropped when no input needs a
  // gradient. Non-finite values raise NumericError naming `op`.
  Var record(Tensor value, std::initializer_list<Var> inputs, const char* op, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& inputs, const char* op, BackwardFn backward);

  // Gradient accumulator for `v`, created as zeros on first use. Only valid
  // during backward().
  Tensor& grad_of(Var v);

  // Reverse accumulation from a scalar output. Returns one gradient per
  // parameter, in registration order; unreached parameters get zeros.
  std::vector<Tensor> backward(Var output);

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    bool is_leaf = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<Var> leaves_;
  std::vector<Tensor> grads_;
};

}  // namespace fvlfp::num
