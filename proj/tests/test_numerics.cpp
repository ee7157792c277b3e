#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "doctest.h"
#include "fvlfp/error.hpp"
#include "fvlfp/linalg.hpp"
#include "fvlfp/ops.hpp"
#include "fvlfp/optim.hpp"
#include "support.hpp"

using namespace fvlfp;
using num::Graph;
using num::Tensor;
using num::Var;
namespace ops = num::ops;

namespace {

Tensor triple_loop(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t.at(i, j);
  return m;
}

Tensor eval(const std::function<Var(Graph&)>& f) {
  Graph g;
  return g.value(f(g));
}

}  // namespace

TEST_CASE("matmul") {
  std::mt19937_64 rng(11);
  const Tensor m = testing::random_tensor({3, 4}, rng);
  CHECK(num::matmul(Tensor::identity(3), m) == m);
  CHECK(num::max_abs_diff(num::matmul(Tensor::zeros(2, 3), m), Tensor::zeros(2, 4)) == 0.0);

  const Tensor a = testing::random_tensor({5, 4}, rng), b = testing::random_tensor({4, 3}, rng);
  CHECK(num::max_abs_diff(num::matmul(a, b), triple_loop(a, b)) <= 1e-12);
  CHECK(num::max_abs_diff(num::matmul_nt(a, b.transposed()), triple_loop(a, b)) <= 1e-12);
  const Tensor graph_ab = eval([&](Graph& g) { return ops::matmul(g, g.constant(a), g.constant(b)); });
  CHECK(num::max_abs_diff(graph_ab, triple_loop(a, b)) <= 1e-12);

  CHECK_THROWS_AS(num::matmul(a, a), DimensionError);
}

TEST_CASE("softmax") {
  auto sm = [](std::vector<double> v) {
    return eval([&](Graph& g) { return ops::softmax(g, g.constant(Tensor::vector(v)), 0); });
  };
  const Tensor half = sm({0.0, 0.0});
  CHECK(half[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(half[1] == doctest::Approx(0.5).epsilon(1e-15));

  const Tensor big = sm({1000.0, 0.0});
  CHECK(big.all_finite());
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);

  const Tensor r = sm({1.0, 2.0, 3.0});
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(r[i] - std::exp(i + 1.0) / z) <= 1e-12);

  std::mt19937_64 rng(3);
  const Tensor x = testing::random_tensor({6, 5}, rng, 4.0);
  for (int axis : {0, 1}) {
    const Tensor s = eval([&](Graph& g) { return ops::softmax(g, g.constant(x), axis); });
    const std::size_t outer = axis == 1 ? 6 : 5, inner = axis == 1 ? 5 : 6;
    for (std::size_t o = 0; o < outer; ++o) {
      double sum = 0.0;
      for (std::size_t i = 0; i < inner; ++i) {
        const double v = axis == 1 ? s.at(o, i) : s.at(i, o);
        CHECK(v > 0.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("layernorm") {
  auto ln = [](const Tensor& x) {
    const std::size_t n = x.cols();
    return eval([&](Graph& g) {
      return ops::layernorm(g, g.constant(x), g.constant(Tensor({n}, 1.0)), g.constant(Tensor({n})), 1e-5);
    });
  };
  CHECK(num::max_abs_diff(ln(Tensor::matrix({{2.5, 2.5, 2.5, 2.5}})), Tensor::zeros(1, 4)) == 0.0);

  const Tensor unit = Tensor::matrix({{1.0, -1.0, 1.0, -1.0}});
  CHECK(num::max_abs_diff(ln(unit), unit) <= 1e-5);  // eps-limited: 1/sqrt(1 + 1e-5)
  const Tensor unit_exact = eval([&](Graph& g) {
    return ops::layernorm(g, g.constant(unit), g.constant(Tensor({4}, 1.0)), g.constant(Tensor({4})), 1e-12);
  });
  CHECK(num::max_abs_diff(unit_exact, unit) <= 1e-9);

  std::mt19937_64 rng(5);
  const Tensor x = testing::random_tensor({1, 7}, rng, 3.0);
  double mu = 0.0, var = 0.0;
  for (double v : x.values()) mu += v;
  mu /= 7.0;
  for (double v : x.values()) var += (v - mu) * (v - mu);
  var /= 7.0;
  const Tensor y = ln(x);
  for (std::size_t j = 0; j < 7; ++j) CHECK(std::abs(y[j] - (x[j] - mu) / std::sqrt(var + 1e-5)) <= 1e-12);
}

TEST_CASE("backward closed forms") {
  std::mt19937_64 rng(9);
  const Tensor xv = testing::random_tensor({5}, rng), yv = testing::random_tensor({5}, rng);
  {
    Graph g;
    Var x = g.parameter(xv);
    Var y = g.constant(yv);
    const auto grads = g.backward(ops::sum(g, ops::mul(g, x, y)));
    REQUIRE(grads.size() == 1);
    CHECK(grads[0] == yv);
  }
  {
    Graph g;
    Var x = g.parameter(xv);
    const auto grads = g.backward(ops::sum(g, ops::mul(g, x, x)));
    for (std::size_t i = 0; i < 5; ++i) CHECK(grads[0][i] == doctest::Approx(2.0 * xv[i]).epsilon(1e-15));
  }
  {
    Graph g;
    Var x = g.parameter(xv);
    CHECK_THROWS_AS(g.backward(ops::scale(g, x, 2.0)), DimensionError);
  }
  {
    // Constants are never handed gradients and unreached parameters get zeros.
    Graph g;
    Var x = g.parameter(xv);
    Var unused = g.parameter(yv);
    (void)unused;
    Var c = g.constant(yv);
    const auto grads = g.backward(ops::sum(g, ops::mul(g, x, c)));
    REQUIRE(grads.size() == 2);
    CHECK(grads[1] == Tensor({5}));
  }
}

TEST_CASE("non-finite values are rejected") {
  Graph g;
  Var x = g.constant(Tensor::vector({1.0, -1.0}));
  CHECK_THROWS_AS(ops::log(g, x), NumericError);
  CHECK_THROWS_AS(g.constant(Tensor::vector({std::nan("")})), NumericError);
}

TEST_CASE("kernel gradients match central differences") {
  std::mt19937_64 rng(21);
  const Tensor a = testing::random_tensor({4, 6}, rng);
  const Tensor b = testing::random_tensor({6, 5}, rng);
  const Tensor gain = testing::random_tensor({5}, rng), bias = testing::random_tensor({5}, rng);

  // One composite touching every differentiable kernel.
  auto loss = [](Graph& g, const std::vector<Var>& p) {
    Var h = ops::linear(g, p[0], p[1], p[3]);
    h = ops::layernorm(g, h, p[2], p[3], 1e-5);
    h = ops::gelu(g, h);
    Var n = ops::l2_normalize_rows(g, h);
    Var sm = ops::softmax(g, ops::matmul_nt(g, n, n), 1);
    Var ls = ops::log_softmax(g, ops::scale(g, h, 0.7), 0);
    Var cos = ops::cosine_rows(g, h, ops::add_scalar(g, h, 0.3));
    Var hinge = ops::hinge(g, ops::abs(g, ops::matvec(g, h, p[2])), 0.05);
    Var gathered = ops::gather_rows(g, {h, ops::slice_rows(g, h, 1, 2)}, {{0, 1}, {1, 1}, {0, 3}});
    Var t = ops::transpose(g, ops::reshape(g, h, {5, 4}));
    Var parts = ops::concat_rows(g, {ops::mean_row_groups(g, h, 2), ops::scale_row_groups(g, h, ops::column(g, t, 0), 1)});
    Var total = ops::add(g, ops::sum(g, ops::mul(g, sm, sm)), ops::mean(g, ls));
    total = ops::add(g, total, ops::sum(g, cos));
    total = ops::add(g, total, ops::sum(g, hinge));
    total = ops::add(g, total, ops::scale(g, ops::sum(g, ops::row_dot(g, gathered, gathered)), 0.1));
    total = ops::sub(g, total, ops::scale(g, ops::sum(g, ops::mul(g, parts, parts)), 0.01));
    total = ops::add(g, total, ops::sum(g, ops::pick(g, ops::softmax(g, h, 1), {0, 1, 2, 3})));
    return total;
  };
  const auto res = testing::check_gradients({a, b, gain, bias}, loss, 120, 4);
  CAPTURE(res.worst);
  CHECK(res.checked == 64);  // every coordinate
  CHECK(res.failed == 0);
}

TEST_CASE("attention matches a direct evaluation") {
  std::mt19937_64 rng(17);
  const std::size_t batch = 2, seq = 5, heads = 2, d = 6, dh = 3;
  const Tensor qkv = testing::random_tensor({batch * seq, 3 * d}, rng);
  const Tensor out = eval([&](Graph& g) { return ops::attention(g, g.constant(qkv), batch, seq, heads); });

  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < seq; ++i) {
        std::vector<double> w(seq);
        double z = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
          double s = 0.0;
          for (std::size_t p = 0; p < dh; ++p) s += qkv.at(b * seq + i, h * dh + p) * qkv.at(b * seq + j, d + h * dh + p);
          w[j] = std::exp(s / std::sqrt(3.0));
          z += w[j];
        }
        for (std::size_t p = 0; p < dh; ++p) {
          double o = 0.0;
          for (std::size_t j = 0; j < seq; ++j) o += w[j] / z * qkv.at(b * seq + j, 2 * d + h * dh + p);
          CHECK(std::abs(out.at(b * seq + i, h * dh + p) - o) <= 1e-12);
        }
      }

  auto loss = [&](Graph& g, const std::vector<Var>& p) {
    Var o = ops::attention(g, p[0], batch, seq, heads);
    return ops::sum(g, ops::mul(g, o, ops::gelu(g, o)));
  };
  // Softmax logits here are O(1) random; a 1e-3 step leaves O(h^2)
  // truncation near 1e-3 on a few coordinates, so use a finer step.
  const auto res = testing::check_gradients({qkv}, loss, 100, 8, 1e-4);
  CAPTURE(res.worst);
  CHECK(res.failed == 0);
}

TEST_CASE("adamw") {
  num::AdamWHyper hyper;
  hyper.lr = 0.1;
  hyper.weight_decay = 0.5;
  {
    std::vector<Tensor> p{Tensor::vector({1.0, -2.0})};
    num::OptimizerState st;
    num::adamw_step(p, {Tensor({2})}, st, hyper);
    CHECK(p[0][0] == doctest::Approx(1.0 - 0.1 * 0.5 * 1.0).epsilon(1e-15));
    CHECK(p[0][1] == doctest::Approx(-2.0 + 0.1 * 0.5 * 2.0).epsilon(1e-15));
    CHECK(st.step == 1);
  }
  {
    num::AdamWHyper h;
    h.lr = 0.01;
    h.weight_decay = 0.0;
    h.eps = 1e-300;
    std::vector<Tensor> p{Tensor::vector({0.0, 0.0, 0.0})};
    num::OptimizerState st;
    num::adamw_step(p, {Tensor::vector({3.0, -0.2, 1e-4})}, st, h);
    CHECK(p[0][0] == doctest::Approx(-0.01));
    CHECK(p[0][1] == doctest::Approx(0.01));
    CHECK(p[0][2] == doctest::Approx(-0.01));
  }
  {
    // Ten steps on f(x) = 0.5 * sum c_i x_i^2 against a scalar transcription.
    const std::vector<double> c{1.0, 3.0, 0.2};
    std::vector<Tensor> p{Tensor::vector({1.0, -0.5, 2.0})};
    std::vector<double> x{1.0, -0.5, 2.0}, m(3, 0.0), v(3, 0.0);
    num::AdamWHyper h;
    h.lr = 0.05;
    h.weight_decay = 0.01;
    num::OptimizerState st;
    for (int t = 1; t <= 10; ++t) {
      Tensor grad({3});
      for (int i = 0; i < 3; ++i) grad[i] = c[i] * p[0][i];
      num::adamw_step(p, {grad}, st, h);
      for (int i = 0; i < 3; ++i) {
        const double gi = c[i] * x[i];
        m[i] = 0.9 * m[i] + 0.1 * gi;
        v[i] = 0.999 * v[i] + 0.001 * gi * gi;
        const double mh = m[i] / (1.0 - std::pow(0.9, t)), vh = v[i] / (1.0 - std::pow(0.999, t));
        x[i] = x[i] - h.lr * h.weight_decay * x[i] - h.lr * mh / (std::sqrt(vh) + h.eps);
      }
    }
    for (int i = 0; i < 3; ++i) CHECK(std::abs(p[0][i] - x[i]) <= 1e-10);
    CHECK(st.step == 10);
    for (double s : st.second_moment[0].values()) CHECK(s >= 0.0);
  }
  {
    // Without decay the update is plain Adam.
    num::AdamWHyper h;
    h.lr = 0.02;
    h.weight_decay = 0.0;
    std::vector<Tensor> p{Tensor::vector({0.3, -0.7})};
    num::OptimizerState st;
    const Tensor grad = Tensor::vector({0.5, 0.25});
    num::adamw_step(p, {grad}, st, h);
    for (int i = 0; i < 2; ++i) {
      const double mh = 0.1 * grad[i] / 0.1, vh = 0.001 * grad[i] * grad[i] / 0.001;
      const double expect = (i == 0 ? 0.3 : -0.7) - 0.02 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(std::abs(p[0][i] - expect) <= 1e-12);
    }
  }
  {
    std::vector<Tensor> p{Tensor::vector({1.0})};
    num::OptimizerState st;
    Tensor bad({1});
    bad[0] = std::nan("");
    CHECK_THROWS_AS(num::adamw_step(p, {bad}, st, hyper), NumericError);
    CHECK_THROWS_AS(num::adamw_step(p, {Tensor({2})}, st, hyper), DimensionError);
  }
}

TEST_CASE("svd_topk") {
  {
    const auto r = num::svd_topk(Tensor::matrix({{2.0, 0.0}, {0.0, 1.0}}), 1);
    CHECK(std::abs(r.basis.at(0, 0) - 1.0) <= 1e-12);
    CHECK(std::abs(r.basis.at(0, 1)) <= 1e-12);
    CHECK(r.singular_values[0] == doctest::Approx(2.0));
    CHECK_FALSE(r.completed);
  }
  {
    const double s = 1.0 / std::sqrt(3.0);
    const auto r = num::svd_topk(Tensor::matrix({{-s, s, -s}, {-s, s, -s}}), 1);
    CHECK(std::abs(r.basis.at(0, 0) - s) <= 1e-12);
    CHECK(std::abs(r.basis.at(0, 1) + s) <= 1e-12);
    CHECK(std::abs(r.basis.at(0, 2) - s) <= 1e-12);

    const auto full = num::svd_topk(Tensor::matrix({{-s, s, -s}, {-s, s, -s}}), 2);
    CHECK(full.completed);
    CHECK(full.numerical_rank == 1);
    CHECK(std::abs(num::dot(full.basis.row(0), full.basis.row(1))) <= 1e-9);
    CHECK(std::abs(num::norm2(full.basis.row(1)) - 1.0) <= 1e-9);
  }
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor m = testing::random_tensor({4, 8}, rng);
    const auto r = num::svd_topk(m, 2);
    // Orthonormal rows, sign convention.
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j)
        CHECK(std::abs(num::dot(r.basis.row(i), r.basis.row(j)) - (i == j ? 1.0 : 0.0)) <= 1e-9);
      for (double v : r.basis.row(i)) {
        if (std::abs(v) > 1e-12) {
          CHECK(v > 0.0);
          break;
        }
      }
    }
    // The eigenvectors of M^T M from an independent solver.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(m).transpose() * to_eigen(m));
    for (std::size_t i = 0; i < 2; ++i) {
      Eigen::VectorXd u = es.eigenvectors().col(7 - static_cast<int>(i));
      const double align = std::abs(u.dot(Eigen::Map<const Eigen::VectorXd>(r.basis.row(i).data(), 8)));
      CHECK(std::abs(align - 1.0) <= 1e-8);
      CHECK(std::abs(r.singular_values[i] - std::sqrt(es.eigenvalues()(7 - static_cast<int>(i)))) <= 1e-8);
    }
    // Residual of the rank-2 reconstruction matches the oracle's optimum.
    const Tensor proj = num::matmul(num::matmul_nt(m, r.basis), r.basis);
    double resid = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) resid += (m[i] - proj[i]) * (m[i] - proj[i]);
    const double best = es.eigenvalues().head(6).sum();
    CHECK(std::abs(resid - best) <= 1e-8);
  }
  CHECK_THROWS_AS(num::svd_topk(Tensor::matrix({{1.0, 0.0}}), 2), DimensionError);
  CHECK_THROWS_AS(num::svd_topk(Tensor::matrix({{1.0, 0.0}}), 0), DimensionError);
}

TEST_CASE("cholesky_solve agrees with an LDLT oracle") {
  std::mt19937_64 rng(41);
  const Tensor r = testing::random_tensor({6, 6}, rng);
  Tensor a = num::matmul(r.transposed(), r);
  for (std::size_t i = 0; i < 6; ++i) a.at(i, i) += 0.5;
  const Tensor b = testing::random_tensor({6, 2}, rng);
  const Tensor x = num::cholesky_solve(a, b);
  const Eigen::MatrixXd ref = to_eigen(a).ldlt().solve(to_eigen(b));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(x.at(i, j) - ref(i, j)) <= 1e-10);
  CHECK_THROWS_AS(num::cholesky_solve(Tensor::matrix({{1.0, 2.0}, {2.0, 1.0}}), Tensor::matrix({{1.0}, {1.0}})),
                  NumericError);
}

TEST_CASE("kernels are pure") {
  std::mt19937_64 rng(2);
  const Tensor qkv = testing::random_tensor({8, 12}, rng);
  auto run = [&] {
    Graph g;
    Var x = g.parameter(qkv);
    Var o = ops::attention(g, x, 2, 4, 2);
    Var l = ops::sum(g, ops::gelu(g, o));
    auto grads = g.backward(l);
    return std::make_pair(g.value(o), grads[0]);
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}
