#include "fvlfp/graph.hpp"

#include "fvlfp/error.hpp"

namespace fvlfp::num {

Var Graph::constant(Tensor value) {
  require_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), false, true, {}});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::parameter(Tensor value) {
  require_finite(value, "parameter");
  nodes_.push_back(Node{std::move(value), true, true, {}});
  Var v{static_cast<std::uint32_t>(nodes_.size() - 1)};
  leaves_.push_back(v);
  return v;
}

bool Graph::any_requires_grad(std::initializer_list<Var> vars) const {
  for (auto v : vars)
    if (v.valid() && nodes_.at(v.id).requires_grad) return true;
  return false;
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, const char* op,
                  BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(inputs), op, std::move(backward));
}

Var Graph::record(Tensor value, const std::vector<Var>& inputs, const char* op,
                  BackwardFn backward) {
  require_finite(value, op);
  bool needs = false;
  for (auto v : inputs) {
    if (v.id >= nodes_.size()) throw Error(std::string(op) + ": input is not on this graph");
    needs = needs || nodes_[v.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), needs, false, needs ? std::move(backward) : BackwardFn{}});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Graph::grad_of(Var v) {
  auto& g = grads_.at(v.id);
  if (g.empty()) g = Tensor(nodes_[v.id].value.shape());
  return g;
}

std::vector<Tensor> Graph::backward(Var output) {
  const auto& out = nodes_.at(output.id);
  if (out.value.size() != 1) {
    throw DimensionError("backward needs a scalar output, got shape " + out.value.shape_string());
  }
  grads_.assign(nodes_.size(), Tensor{});
  if (out.requires_grad) {
    grads_[output.id] = Tensor(out.value.shape(), 1.0);
    for (std::size_t i = output.id + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (!node.requires_grad || node.is_leaf || !node.backward) continue;
      if (grads_[i].empty()) continue;
      const Tensor g = std::move(grads_[i]);
      node.backward(*this, g);
      grads_[i] = g;
    }
  }
  std::vector<Tensor> result;
  result.reserve(leaves_.size());
  for (auto leaf : leaves_) {
    auto& g = grads_[leaf.id];
    if (g.empty()) {
      result.emplace_back(nodes_[leaf.id].value.shape());
    } else {
      require_finite(g, "backward");
      result.push_back(std::move(g));
    }
  }
  grads_.clear();
  return result;
}

}  // namespace fvlfp::num
