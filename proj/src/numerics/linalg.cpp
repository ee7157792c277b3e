#include "fvlfp/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fvlfp/error.hpp"

namespace fvlfp::num {

SymmetricEigen eigen_symmetric(const Tensor& a, double tol, int max_sweeps) {
  const std::size_t n = a.rows();
  if (a.rank() != 2 || a.cols() != n) throw DimensionError("eigen_symmetric: matrix must be square");
  Tensor m = a;
  Tensor v = Tensor::identity(n);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0, total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        total += m.at(i, j) * m.at(i, j);
        if (i != j) off += m.at(i, j) * m.at(i, j);
      }
    if (off <= tol * tol * std::max(total, 1e-300)) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m.at(p, q);
        if (apq == 0.0) continue;
        const double theta = (m.at(q, q) - m.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m.at(k, p), mkq = m.at(k, q);
          m.at(k, p) = c * mkp - s * mkq;
          m.at(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m.at(p, k), mqk = m.at(q, k);
          m.at(p, k) = c * mpk - s * mqk;
          m.at(q, k) = s * mpk + c * mqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return m.at(x, x) > m.at(y, y); });
  SymmetricEigen out;
  out.vectors = Tensor({n, n});
  for (std::size_t r = 0; r < n; ++r) {
    out.values.push_back(m.at(order[r], order[r]));
    for (std::size_t k = 0; k < n; ++k) out.vectors.at(r, k) = v.at(k, order[r]);
  }
  return out;
}

namespace {

// Removes the components along rows [0, filled) of `basis` from `x`, twice.
void orthogonalize(std::span<double> x, const Tensor& basis, std::size_t filled) {
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t r = 0; r < filled; ++r) {
      const double c = dot(x, basis.row(r));
      for (std::size_t j = 0; j < x.size(); ++j) x[j] -= c * basis.row(r)[j];
    }
  }
}

void normalize_sign(std::span<double> x) {
  for (double v : x) {
    if (std::abs(v) > 1e-12) {
      if (v < 0)
        for (double& w : x) w = -w;
      return;
    }
  }
}

}  // namespace

TopKSvd svd_topk(const Tensor& m, std::size_t k) {
  if (m.rank() != 2) throw DimensionError("svd_topk: expected a matrix");
  const std::size_t rows = m.rows(), d = m.cols();
  if (k < 1 || k > std::min(rows, d)) {
    throw DimensionError("svd_topk: k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(std::min(rows, d)) + "]");
  }
  const Tensor gram = matmul_nt(m, m);
  const SymmetricEigen eig = eigen_symmetric(gram);
  const double sigma_max = std::sqrt(std::max(eig.values.front(), 0.0));

  TopKSvd out;
  out.basis = Tensor({k, d});
  std::size_t filled = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double sigma = std::sqrt(std::max(eig.values[i], 0.0));
    if (!(sigma > 1e-9 * sigma_max) || sigma_max == 0.0) break;
    auto row = out.basis.row(filled);
    // v = M^T u / sigma
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < rows; ++r) s += m.at(r, j) * eig.vectors.at(i, r);
      row[j] = s / sigma;
    }
    orthogonalize(row, out.basis, filled);
    const double nr = norm2(row);
    if (!(nr > 0.5)) break;
    for (double& x : row) x /= nr;
    normalize_sign(row);
    out.singular_values.push_back(sigma);
    ++filled;
  }
  out.numerical_rank = filled;
  for (std::size_t e = 0; filled < k && e < d; ++e) {
    auto row = out.basis.row(filled);
    std::fill(row.begin(), row.end(), 0.0);
    row[e] = 1.0;
    orthogonalize(row, out.basis, filled);
    const double nr = norm2(row);
    if (nr < 1e-6) continue;
    for (double& x : row) x /= nr;
    normalize_sign(row);
    out.singular_values.push_back(0.0);
    out.completed = true;
    ++filled;
  }
  return out;
}

Tensor cholesky_solve(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows();
  const std::size_t brows = b.rank() == 2 ? b.rows() : b.size();
  if (a.rank() != 2 || a.cols() != n || brows != n) {
    throw DimensionError("cholesky_solve: shapes " + a.shape_string() + " and " + b.shape_string());
  }
  Tensor l({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
      if (i == j) {
        if (!(s > 0.0)) throw NumericError("cholesky_solve: matrix is not positive definite");
        l.at(i, i) = std::sqrt(s);
      } else {
        l.at(i, j) = s / l.at(j, j);
      }
    }
  }
  const std::size_t nrhs = b.rank() == 2 ? b.cols() : 1;
  Tensor x = b.rank() == 2 ? b : b.reshaped({n, 1});
  for (std::size_t c = 0; c < nrhs; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = x.at(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l.at(i, k) * x.at(k, c);
      x.at(i, c) = s / l.at(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = x.at(i, c);
      for (std::size_t k = i + 1; k < n; ++k) s -= l.at(k, i) * x.at(k, c);
      x.at(i, c) = s / l.at(i, i);
    }
  }
  return b.rank() == 2 ? x : x.reshaped(b.shape());
}

}  // namespace fvlfp::num
