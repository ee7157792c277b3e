#include <cmath>
#include <random>

#include "doctest.h"
#include "fvlfp/cdfp.hpp"
#include "fvlfp/error.hpp"
#include "fvlfp/ops.hpp"
#include "support.hpp"

using namespace fvlfp;
using num::Graph;
using num::Tensor;
using num::Var;

namespace {

Tensor mean_rows(const Tensor& s) {
  Tensor h({s.cols()});
  for (std::size_t r = 0; r < s.rows(); ++r)
    for (std::size_t c = 0; c < s.cols(); ++c) h[c] += s.at(r, c) / static_cast<double>(s.rows());
  return h;
}

std::vector<double> softmax_ref(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  std::vector<double> out;
  double z = 0.0;
  for (double v : x) z += std::exp(v - mx);
  for (double v : x) out.push_back(std::exp(v - mx) / z);
  return out;
}

}  // namespace

TEST_CASE("contextualize") {
  const Tensor one = Tensor::matrix({{0.5, -1.0, 2.0}});
  CHECK(cdfp::contextualize(one) == one.reshaped({1, 3}));
  const Tensor opposite = Tensor::matrix({{0.3, -0.7}, {-0.3, 0.7}});
  CHECK(num::norm2(cdfp::contextualize(opposite).values()) == 0.0);

  std::mt19937_64 rng(1);
  const Tensor s = testing::random_tensor({3, 5}, rng);
  const Tensor h = cdfp::contextualize(s);
  const Tensor want = mean_rows(s);
  for (std::size_t c = 0; c < 5; ++c) CHECK(std::abs(h[c] - want[c]) <= 1e-12);
}

TEST_CASE("gap_weights") {
  std::mt19937_64 rng(2);
  const Tensor q = testing::random_tensor({4}, rng);
  const Tensor w1 = cdfp::gap_weights(q, {testing::random_tensor({4}, rng)});
  CHECK(w1.size() == 1);
  CHECK(w1[0] == 1.0);

  const Tensor orth = Tensor::vector({0.0, 0.0, 1.0});
  const Tensor uniform = cdfp::gap_weights(orth, {Tensor::vector({1.0, 2.0, 0.0}), Tensor::vector({-3.0, 1.0, 0.0}),
                                                  Tensor::vector({0.5, 0.5, 0.0})});
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(uniform[i] - 1.0 / 3.0) <= 1e-12);

  const Tensor w = cdfp::gap_weights(Tensor::vector({1.0, 0.0}), {Tensor::vector({1.0, 0.0}), Tensor::vector({0.0, 1.0})});
  const double e = std::exp(1.0);
  CHECK(std::abs(w[0] - e / (e + 1.0)) <= 1e-12);
  CHECK(std::abs(w[1] - 1.0 / (e + 1.0)) <= 1e-12);

  CHECK_THROWS_AS(cdfp::gap_weights(q, {}), DimensionError);
}

TEST_CASE("gap weights lie on the simplex and ignore logit shifts") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor q = testing::random_tensor({6}, rng, 3.0);
    std::vector<Tensor> ctx;
    for (int i = 0; i < 4; ++i) ctx.push_back(testing::random_tensor({6}, rng));
    const Tensor w = cdfp::gap_weights(q, ctx);
    double sum = 0.0;
    for (double v : w.values()) {
      CHECK(v > 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);

    // Adding c * q / |q|^2 to every context adds c to every logit.
    const double c = 2.5, qq = num::dot(q.values(), q.values());
    std::vector<Tensor> shifted = ctx;
    for (auto& h : shifted)
      for (std::size_t j = 0; j < 6; ++j) h[j] += c * q[j] / qq;
    const Tensor ws = cdfp::gap_weights(q, shifted);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(ws[i] - w[i]) <= 1e-12);
  }
}

TEST_CASE("gap_pool") {
  std::mt19937_64 rng(4);
  const Tensor p0 = testing::random_tensor({2, 3}, rng), p1 = testing::random_tensor({2, 3}, rng);
  CHECK(cdfp::gap_pool(Tensor::vector({1.0}), {p0}) == p0);
  CHECK(num::norm2(cdfp::gap_pool(Tensor::vector({0.4, 0.6}), {Tensor({2, 3}), Tensor({2, 3})}).values()) == 0.0);
  const Tensor pooled = cdfp::gap_pool(Tensor::vector({0.25, 0.75}), {p0, p1});
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(std::abs(pooled[i] - (0.25 * p0[i] + 0.75 * p1[i])) <= 1e-12);
    CHECK(pooled[i] >= std::min(p0[i], p1[i]) - 1e-15);
    CHECK(pooled[i] <= std::max(p0[i], p1[i]) + 1e-15);
  }
  CHECK_THROWS_AS(cdfp::gap_pool(Tensor::vector({0.5, 0.5}), {p0}), DimensionError);
}

TEST_CASE("apply_cross_layer") {
  std::mt19937_64 rng(5);
  const Tensor p = testing::random_tensor({2, 4}, rng), p0 = testing::random_tensor({2, 4}, rng);
  const Tensor q = testing::random_tensor({4}, rng);
  const Tensor one = cdfp::apply_cross_layer(p, {p0}, q);
  for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(one[i] - (p[i] + p0[i])) <= 1e-15);

  CHECK(cdfp::apply_cross_layer(p, {Tensor({2, 4}), Tensor({2, 4})}, q) == p);
  CHECK_THROWS_AS(cdfp::apply_cross_layer(p, {}, q), DimensionError);

  // Three random history states through composed oracles.
  std::vector<Tensor> hist;
  for (int i = 0; i < 3; ++i) hist.push_back(testing::random_tensor({2, 4}, rng));
  std::vector<double> logits;
  for (const auto& h : hist) logits.push_back(num::dot(mean_rows(h).values(), q.values()));
  const auto gamma = softmax_ref(logits);
  const Tensor out = cdfp::apply_cross_layer(p, hist, q);
  for (std::size_t i = 0; i < 8; ++i) {
    double want = p[i];
    for (int h = 0; h < 3; ++h) want += gamma[h] * hist[h][i];
    CHECK(std::abs(out[i] - want) <= 1e-12);
  }
}

TEST_CASE("cross-layer residual gradients match central differences") {
  std::mt19937_64 rng(6);
  std::vector<Tensor> params{testing::random_tensor({2, 5}, rng), testing::random_tensor({5}, rng)};
  for (int i = 0; i < 3; ++i) params.push_back(testing::random_tensor({2, 5}, rng));
  const Tensor target = testing::random_tensor({2, 5}, rng);
  auto loss = [&](Graph& g, const std::vector<Var>& v) {
    std::vector<Var> hist(v.begin() + 2, v.end());
    Var out = cdfp::apply_cross_layer(g, v[0], hist, v[1], 2);
    return num::ops::sum(g, num::ops::mul(g, num::ops::gelu(g, out), g.constant(target)));
  };
  const auto res = testing::check_gradients(params, loss, 45, 7);
  CAPTURE(res.worst);
  CHECK(res.failed == 0);

  // The query gradient is generically nonzero.
  Graph g;
  std::vector<Var> v;
  for (const auto& t : params) v.push_back(g.parameter(t));
  const auto grads = g.backward(loss(g, v));
  CHECK(num::norm2(grads[1].values()) > 1e-6);
}

TEST_CASE("batched GAP keeps samples independent") {
  std::mt19937_64 rng(8);
  const std::size_t n = 3, K = 2, d = 4;
  const Tensor q = testing::random_tensor({d}, rng);
  const Tensor p = testing::random_tensor({n * K, d}, rng);
  std::vector<Tensor> hist{testing::random_tensor({n * K, d}, rng), testing::random_tensor({n * K, d}, rng)};
  Graph g;
  std::vector<Var> hv;
  for (const auto& h : hist) hv.push_back(g.constant(h));
  const Tensor out = g.value(cdfp::apply_cross_layer(g, g.constant(p), hv, g.constant(q), K));
  for (std::size_t b = 0; b < n; ++b) {
    auto rows = [&](const Tensor& t) {
      Tensor r({K, d});
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t c = 0; c < d; ++c) r.at(k, c) = t.at(b * K + k, c);
      return r;
    };
    const Tensor one = cdfp::apply_cross_layer(rows(p), {rows(hist[0]), rows(hist[1])}, q);
    CHECK(num::max_abs_diff(one, rows(out)) <= 1e-12);
  }
}
