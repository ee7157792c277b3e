#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "doctest.h"
#include "fvlfp/dsop.hpp"
#include "fvlfp/error.hpp"
#include "fvlfp/linalg.hpp"
#include "fvlfp/ops.hpp"
#include "support.hpp"

using namespace fvlfp;
using dsop::DemographicSubspace;
using num::Graph;
using num::Tensor;
using num::Var;

namespace {

DemographicSubspace basis_subspace(Tensor basis) {
  DemographicSubspace s;
  s.k = basis.rows();
  s.sources = basis;
  s.basis = std::move(basis);
  return s;
}

Tensor random_orthonormal(std::size_t k, std::size_t d, std::mt19937_64& rng) {
  const Tensor m = testing::random_tensor({d, k}, rng);
  Eigen::MatrixXd e(d, k);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < k; ++j) e(i, j) = m.at(i, j);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(e).householderQ() * Eigen::MatrixXd::Identity(d, k);
  Tensor out({k, d});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = q(j, i);
  return out;
}

Tensor unit(Tensor t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const double n = num::norm2(t.row(r));
    for (auto& v : t.row(r)) v /= n;
  }
  return t;
}

std::pair<double, double> ref_task_terms(const Tensor& zt, const Tensor& z, const Tensor& t, double tau) {
  const std::size_t n = zt.rows();
  double term1 = 0.0, term2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double den = 0.0;
    for (std::size_t j = 0; j < n; ++j) den += std::exp(num::dot(zt.row(i), t.row(j)) / tau);
    term1 += -std::log(std::exp(num::dot(zt.row(i), t.row(i)) / tau) / den);
    den = 0.0;
    for (std::size_t j = 0; j < n; ++j) den += std::exp(num::dot(z.row(j), t.row(i)) / tau);
    term2 += -std::log(std::exp(num::dot(z.row(i), t.row(i)) / tau) / den);
  }
  return {term1 / n, term2 / n};
}

double ref_task_loss(const Tensor& zt, const Tensor& z, const Tensor& t, double tau) {
  const auto [a, b] = ref_task_terms(zt, z, t, tau);
  return a + b;
}

}  // namespace

TEST_CASE("build_subspace") {
  const Tensor u = unit(Tensor::matrix({{1.0, -2.0, 0.5, 3.0}}));
  Tensor twice({2, 4});
  for (std::size_t j = 0; j < 4; ++j) twice.at(0, j) = twice.at(1, j) = u[j];
  const auto same = dsop::subspace_from_embeddings(twice, 1);
  const double sign = same.basis[0] > 0 ? 1.0 : -1.0;
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(same.basis[j] - sign * u[j]) <= 1e-12);

  // Two orthogonal embeddings, k = 2: same projector.
  const auto full = dsop::subspace_from_embeddings(Tensor::matrix({{0.6, 0.8, 0.0}, {0.0, 0.0, 2.0}}), 2);
  const Tensor P = num::matmul(full.basis.transposed(), full.basis);
  const Tensor want = Tensor::matrix({{0.36, 0.48, 0.0}, {0.48, 0.64, 0.0}, {0.0, 0.0, 1.0}});
  CHECK(num::max_abs_diff(P, want) <= 1e-9);

  const enc::TextEncoder text(32, 9);
  const auto templates = enc::build_prompt_templates("smiling", "gender").groups;
  const auto sub = dsop::build_subspace(text, templates, 1);
  CHECK(sub.sources == text.encode_all(templates));
  Eigen::MatrixXd T(2, 32);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 32; ++j) T(i, j) = sub.sources.at(i, j);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T.transpose() * T);
  const Eigen::VectorXd top = es.eigenvectors().col(31);
  double align = 0.0;
  for (std::size_t j = 0; j < 32; ++j) align += top(j) * sub.basis[j];
  CHECK(std::abs(std::abs(align) - 1.0) <= 1e-8);
  CHECK(std::abs(num::norm2(sub.basis.values()) - 1.0) <= 1e-9);

  CHECK_THROWS_AS(dsop::build_subspace(text, templates, 3), ConfigError);
  CHECK_THROWS_AS(dsop::build_subspace(text, {"a photo of a man"}, 1), ConfigError);
}

TEST_CASE("project_out examples") {
  const auto sub = basis_subspace(Tensor::matrix({{1.0, 0.0, 0.0}}));
  const auto p = dsop::project_out(Tensor::vector({3.0, 4.0, 0.0}), sub);
  CHECK(p.debiased == Tensor::vector({0.0, 4.0, 0.0}));
  CHECK(p.bias == Tensor::vector({3.0, 0.0, 0.0}));
  const auto q = dsop::project_out(Tensor::vector({0.0, -1.5, 2.0}), sub);
  CHECK(q.debiased == Tensor::vector({0.0, -1.5, 2.0}));
  CHECK(num::norm2(q.bias.values()) == 0.0);
  CHECK_THROWS_AS(dsop::project_out(Tensor::vector({1.0, 2.0}), sub), DimensionError);
}

TEST_CASE("project_out properties on random inputs") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 16, k = 1 + trial % 3;
    const auto sub = basis_subspace(random_orthonormal(k, d, rng));
    const Tensor z = testing::random_tensor({d}, rng, 2.0);
    const auto p = dsop::project_out(z, sub);
    const double zn = num::norm2(z.values());
    for (std::size_t i = 0; i < k; ++i) CHECK(std::abs(num::dot(p.debiased.values(), sub.basis.row(i))) <= 1e-10 * zn);
    const auto twice = dsop::project_out(p.debiased, sub);
    CHECK(num::max_abs_diff(twice.debiased, p.debiased) <= 1e-12);
    for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(p.debiased[j] + p.bias[j] - z[j]) <= 1e-12);

    // Graph version agrees row-wise.
    Graph g;
    const Tensor zm = z.reshaped({1, d});
    const Tensor pg = g.value(dsop::project_out(g, g.constant(zm), sub));
    CHECK(num::max_abs_diff(pg.reshaped({d}), p.debiased) <= 1e-12);
  }
}

TEST_CASE("fairness_loss") {
  const auto sub = basis_subspace(Tensor::matrix({{1.0, 0.0, 0.0}}));
  const double s = std::sqrt(1.0 - 0.81);
  CHECK(dsop::fairness_loss(Tensor::vector({0.9, s, 0.0}), sub, 0.3) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(dsop::fairness_loss(Tensor::vector({0.2, 0.0, std::sqrt(0.96)}), sub, 0.3) == 0.0);
  CHECK_THROWS_AS(dsop::fairness_loss(Tensor::vector({0.0, 0.0, 0.0}), sub, 0.3), NumericError);

  std::mt19937_64 rng(4);
  DemographicSubspace templ;
  templ.sources = testing::random_tensor({3, 6}, rng);
  templ.basis = num::svd_topk(templ.sources, 1).basis;
  templ.k = 1;
  const Tensor z = unit(testing::random_tensor({5, 6}, rng));
  for (double mu : {0.0, 0.1, 0.3, 0.6}) {
    Graph g;
    const Tensor per = g.value(dsop::fairness_loss(g, g.constant(z), templ, mu));
    for (std::size_t r = 0; r < 5; ++r) {
      double want = 0.0;
      for (std::size_t a = 0; a < 3; ++a)
        want += std::max(0.0, num::dot(z.row(r), templ.sources.row(a)) / num::norm2(templ.sources.row(a)) - mu);
      CHECK(std::abs(per[r] - want) <= 1e-12);
      CHECK(std::abs(dsop::fairness_loss(Tensor(std::vector<std::size_t>{6}, std::vector<double>(z.row(r).begin(), z.row(r).end())), templ, mu) - want) <= 1e-12);
    }
  }
  // Lowering mu never lowers the loss.
  double prev = -1.0;
  for (double mu = 0.95; mu >= 0.0; mu -= 0.05) {
    const double l = dsop::fairness_loss(Tensor(std::vector<std::size_t>{6}, std::vector<double>(z.row(0).begin(), z.row(0).end())), templ, mu);
    CHECK(l >= prev);
    prev = l;
  }

  // Gradient w.r.t. the embedding away from hinge kinks; zero when inactive.
  auto loss = [&](Graph& g, const std::vector<Var>& v) {
    return num::ops::sum(g, dsop::fairness_loss(g, v[0], templ, 0.0));
  };
  const auto res = testing::check_gradients({z}, loss, 30, 1);
  CAPTURE(res.worst);
  CHECK(res.failed == 0);
  Graph g;
  Var zv = g.parameter(z);
  const auto grads = g.backward(num::ops::sum(g, dsop::fairness_loss(g, zv, templ, 0.999)));
  CHECK(num::norm2(grads[0].values()) == 0.0);
}

TEST_CASE("task_loss") {
  dsop::TaskLossOptions opt;
  const Tensor one = unit(Tensor::matrix({{1.0, 2.0, -1.0}}));
  CHECK(std::abs(dsop::task_loss(one, one, unit(Tensor::matrix({{0.3, 0.1, 0.2}})), opt)) <= 1e-15);

  // Every logit equal: 2 log 2.
  const Tensor e1 = Tensor::matrix({{1.0, 0.0}, {1.0, 0.0}});
  CHECK(dsop::task_loss(e1, e1, e1, opt) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-14));

  std::mt19937_64 rng(6);
  for (double tau : {0.07, 1.0}) {
    opt.tau = tau;
    const Tensor zt = unit(testing::random_tensor({4, 8}, rng));
    const Tensor z = unit(testing::random_tensor({4, 8}, rng));
    const Tensor t = unit(testing::random_tensor({4, 8}, rng));
    const double got = dsop::task_loss(zt, z, t, opt);
    CHECK(std::abs(got - ref_task_loss(zt, z, t, tau)) <= 1e-10);
    CHECK(got >= 0.0);

    dsop::TaskLossOptions sym = opt;
    sym.symmetric = true;
    CHECK(std::abs(dsop::task_loss(zt, z, t, sym) - ref_task_loss(zt, zt, t, tau)) <= 1e-10);
    dsop::TaskLossOptions strict = opt;
    strict.strict_as_printed = true;
    const auto [t1, t2] = ref_task_terms(zt, z, t, tau);
    CHECK(std::abs(dsop::task_loss(zt, z, t, strict) - (t1 - t2)) <= 1e-10);
  }
  CHECK_THROWS_AS(dsop::task_loss(Tensor::zeros(2, 3), Tensor::zeros(3, 3), Tensor::zeros(2, 3), opt), DimensionError);
}

TEST_CASE("joint_loss") {
  const std::vector<double> fair{0.2, 0.8};
  CHECK(dsop::joint_loss(1.3, fair, 0.0).l_final == 1.3);
  const auto b = dsop::joint_loss(1.0, fair, 2.0);
  CHECK(b.l_fair == doctest::Approx(0.5));
  CHECK(b.l_final == doctest::Approx(2.0).epsilon(1e-15));

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> f(5);
    for (auto& v : f) v = u(rng);
    const double task = u(rng), lambda = u(rng);
    const auto r = dsop::joint_loss(task, f, lambda);
    double mean = 0.0;
    for (double v : f) mean += v / 5.0;
    CHECK(std::abs(r.l_final - (task + lambda * mean)) <= 1e-12);
    CHECK(std::abs(r.l_final - (r.l_vlm + r.lambda1 * r.l_fair)) <= 1e-12);
    CHECK(r.l_fair >= 0.0);

    Graph g;
    const double graph = g.value(dsop::joint_loss(g, g.constant(Tensor::scalar(task)),
                                                   g.constant(Tensor::vector(f)), lambda)).item();
    CHECK(std::abs(graph - r.l_final) <= 1e-12);
  }
  CHECK_THROWS_AS(dsop::joint_loss(1.0, fair, -1.0), ConfigError);
}
