#pragma once

#include <span>
#include <string>
#include <vector>

#include "fvlfp/encoder.hpp"
#include "fvlfp/graph.hpp"
#include "fvlfp/tensor.hpp"

// Demographic subspace projection and the losses built on it.
namespace fvlfp::dsop {

using num::Graph;
using num::Tensor;
using num::Var;

struct DemographicSubspace {
  Tensor basis;    // k x d, orthonormal rows
  Tensor sources;  // |A| x d template embeddings
  std::string attribute;
  std::size_t k = 0;
};

// Encodes the templates and keeps the top-k right singular directions.
DemographicSubspace build_subspace(const enc::TextEncoder& text, const std::vector<std::string>& templates,
                                   std::size_t k, std::string attribute = "gender");
DemographicSubspace subspace_from_embeddings(Tensor sources, std::size_t k, std::string attribute = "gender");

struct Projection {
  Tensor debiased;
  Tensor bias;
};

// Works on a single vector or on the rows of a matrix.
Projection project_out(const Tensor& z, const DemographicSubspace& sub);

// z - z V^T V, row-wise; not normalised.
Var project_out(Graph& g, Var z, const DemographicSubspace& sub);
// Unit-norm debiased rows.
Var debias(Graph& g, Var z, const DemographicSubspace& sub);

// sum_a max(0, cos(z, t_a) - mu) for one vector.
double fairness_loss(const Tensor& z_debiased_unit, const DemographicSubspace& sub, double mu);
// Per-row hinge sums, length n.
Var fairness_loss(Graph& g, Var z_debiased, const DemographicSubspace& sub, double mu);

struct TaskLossOptions {
  double tau = 0.07;
  // term1 - term2, the sign exactly as typeset.
  bool strict_as_printed = false;
  // Debiased embeddings in the text->image term too.
  bool symmetric = false;
};

// Two-term contrastive loss over in-batch ground-truth text rows.
// term1: debiased image -> text (row softmax); term2: text -> raw image
// (column softmax).
Var task_loss(Graph& g, Var z_debiased, Var z_raw, Var text_gt, const TaskLossOptions& opt);
double task_loss(const Tensor& z_debiased, const Tensor& z_raw, const Tensor& text_gt,
                 const TaskLossOptions& opt);

struct LossBreakdown {
  double l_vlm = 0.0;
  double l_fair = 0.0;
  double l_final = 0.0;
  double lambda1 = 0.0;
};

LossBreakdown joint_loss(double task, std::span<const double> fair_per_sample, double lambda1);
Var joint_loss(Graph& g, Var task, Var fair_per_sample, double lambda1);

}  // namespace fvlfp::dsop
