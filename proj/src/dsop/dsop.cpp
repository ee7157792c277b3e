#include "fvlfp/dsop.hpp"

#include <cmath>

#include "fvlfp/error.hpp"
#include "fvlfp/linalg.hpp"
#include "fvlfp/ops.hpp"

namespace fvlfp::dsop {

namespace ops = num::ops;

DemographicSubspace subspace_from_embeddings(Tensor sources, std::size_t k, std::string attribute) {
  if (sources.rank() != 2 || sources.rows() < 2) {
    throw ConfigError("build_subspace: need at least 2 attribute templates");
  }
  if (k < 1 || k > sources.rows()) {
    throw ConfigError("build_subspace: k=" + std::to_string(k) + " must lie in [1, " +
                      std::to_string(sources.rows()) + "]");
  }
  num::require_finite(sources, "build_subspace");
  DemographicSubspace sub;
  sub.basis = num::svd_topk(sources, k).basis;
  sub.sources = std::move(sources);
  sub.attribute = std::move(attribute);
  sub.k = k;
  return sub;
}

DemographicSubspace build_subspace(const enc::TextEncoder& text, const std::vector<std::string>& templates,
                                   std::size_t k, std::string attribute) {
  if (templates.size() < 2) throw ConfigError("build_subspace: need at least 2 attribute templates");
  return subspace_from_embeddings(text.encode_all(templates), k, std::move(attribute));
}

Projection project_out(const Tensor& z, const DemographicSubspace& sub) {
  const std::size_t d = sub.basis.cols();
  if (z.cols() != d || z.rank() == 0 || z.rank() > 2) {
    throw DimensionError("project_out: embedding " + z.shape_string() + " vs basis " +
                         sub.basis.shape_string());
  }
  Projection p{z, Tensor(z.shape())};
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto zr = z.row(r);
    auto br = p.bias.row(r);
    for (std::size_t i = 0; i < sub.basis.rows(); ++i) {
      auto v = sub.basis.row(i);
      const double c = num::dot(v, zr);
      for (std::size_t j = 0; j < d; ++j) br[j] += c * v[j];
    }
    auto dr = p.debiased.row(r);
    for (std::size_t j = 0; j < d; ++j) dr[j] = zr[j] - br[j];
  }
  return p;
}

Var project_out(Graph& g, Var z, const DemographicSubspace& sub) {
  const Tensor& Z = g.value(z);
  if (Z.rank() != 2 || Z.cols() != sub.basis.cols()) {
    throw DimensionError("project_out: embedding " + Z.shape_string() + " vs basis " +
                         sub.basis.shape_string());
  }
  Var v = g.constant(sub.basis);
  return ops::sub(g, z, ops::matmul(g, ops::matmul_nt(g, z, v), v));
}

Var debias(Graph& g, Var z, const DemographicSubspace& sub) {
  return ops::l2_normalize_rows(g, project_out(g, z, sub));
}

namespace {

Tensor unit_rows(const Tensor& t) {
  Tensor out = t;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double n = num::norm2(row);
    if (!(n > 0.0)) throw NumericError("fairness_loss: zero-norm template embedding");
    for (auto& x : row) x /= n;
  }
  return out;
}

}  // namespace

double fairness_loss(const Tensor& z, const DemographicSubspace& sub, double mu) {
  if (z.size() != sub.sources.cols()) throw DimensionError("fairness_loss: dimension mismatch");
  const double n = num::norm2(z.values());
  if (!(n > 0.0)) throw NumericError("fairness_loss: zero-norm embedding");
  double total = 0.0;
  for (std::size_t a = 0; a < sub.sources.rows(); ++a) {
    auto t = sub.sources.row(a);
    const double c = num::dot(z.values(), t) / (n * num::norm2(t));
    total += std::max(0.0, c - mu);
  }
  return total;
}

Var fairness_loss(Graph& g, Var z, const DemographicSubspace& sub, double mu) {
  const Tensor& Z = g.value(z);
  if (Z.rank() != 2 || Z.cols() != sub.sources.cols()) throw DimensionError("fairness_loss: dimension mismatch");
  for (std::size_t r = 0; r < Z.rows(); ++r)
    if (!(num::norm2(Z.row(r)) > 0.0)) throw NumericError("fairness_loss: zero-norm embedding");
  Var cos = ops::matmul_nt(g, ops::l2_normalize_rows(g, z), g.constant(unit_rows(sub.sources)));
  Var ones = g.constant(Tensor({sub.sources.rows()}, 1.0));
  return ops::matvec(g, ops::hinge(g, cos, mu), ones);
}

Var task_loss(Graph& g, Var z_debiased, Var z_raw, Var text_gt, const TaskLossOptions& opt) {
  const Tensor& A = g.value(z_debiased);
  const Tensor& B = g.value(z_raw);
  const Tensor& T = g.value(text_gt);
  if (A.rank() != 2 || !A.same_shape(B) || !A.same_shape(T)) {
    throw DimensionError("task_loss: shapes " + A.shape_string() + ", " + B.shape_string() + ", " +
                         T.shape_string() + " must agree");
  }
  if (A.rows() == 0) throw DimensionError("task_loss: empty batch");
  if (!(opt.tau > 0.0)) throw ConfigError("task_loss: tau must be positive");
  std::vector<std::size_t> diag(A.rows());
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = i;

  Var l1 = ops::scale(g, ops::matmul_nt(g, z_debiased, text_gt), 1.0 / opt.tau);
  Var term1 = ops::scale(g, ops::mean(g, ops::pick(g, ops::log_softmax(g, l1, 1), diag)), -1.0);
  // Column j of l2 holds text j against every image; entry (i, i) picks the
  // matching image for text i.
  Var l2 = ops::scale(g, ops::matmul_nt(g, opt.symmetric ? z_debiased : z_raw, text_gt), 1.0 / opt.tau);
  Var term2 = ops::scale(g, ops::mean(g, ops::pick(g, ops::log_softmax(g, l2, 0), diag)), -1.0);
  return opt.strict_as_printed ? ops::sub(g, term1, term2) : ops::add(g, term1, term2);
}

double task_loss(const Tensor& z_debiased, const Tensor& z_raw, const Tensor& text_gt,
                 const TaskLossOptions& opt) {
  Graph g;
  return g.value(task_loss(g, g.constant(z_debiased), g.constant(z_raw), g.constant(text_gt), opt)).item();
}

LossBreakdown joint_loss(double task, std::span<const double> fair, double lambda1) {
  if (!(lambda1 >= 0.0)) throw ConfigError("joint_loss: lambda1 must be non-negative");
  LossBreakdown b;
  b.l_vlm = task;
  b.lambda1 = lambda1;
  double s = 0.0;
  for (double f : fair) s += f;
  b.l_fair = fair.empty() ? 0.0 : s / static_cast<double>(fair.size());
  b.l_final = b.l_vlm + lambda1 * b.l_fair;
  return b;
}

Var joint_loss(Graph& g, Var task, Var fair, double lambda1) {
  if (!(lambda1 >= 0.0)) throw ConfigError("joint_loss: lambda1 must be non-negative");
  if (lambda1 == 0.0) return task;
  return ops::add(g, task, ops::scale(g, ops::mean(g, fair), lambda1));
}

}  // namespace fvlfp::dsop
