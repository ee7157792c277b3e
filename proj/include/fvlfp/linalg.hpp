#pragma once

#include <cstddef>
#include <vector>

#include "fvlfp/tensor.hpp"

namespace fvlfp::num {

struct SymmetricEigen {
  std::vector<double> values;  // descending
  Tensor vectors;              // row i is the eigenvector for values[i]
};

// Cyclic Jacobi rotations; intended for the small Gram matrices used here.
SymmetricEigen eigen_symmetric(const Tensor& a, double tol = 1e-15, int max_sweeps = 100);

struct TopKSvd {
  Tensor basis;                        // k x d, orthonormal rows
  std::vector<double> singular_values;  // k entries, descending; completed rows report 0
  std::size_t numerical_rank = 0;
  // True when k exceeded the numerical rank and trailing rows were filled
  // by completing an orthonormal set.
  bool completed = false;
};

// Top-k right singular vectors of m (rows x d) through the eigendecomposition
// of the rows x rows Gram matrix. Each row is sign-normalised so that its
// first nonzero coordinate is positive.
TopKSvd svd_topk(const Tensor& m, std::size_t k);

// Solves (a) x = b for symmetric positive definite a; b may hold several
// right-hand sides as columns.
Tensor cholesky_solve(const Tensor& a, const Tensor& b);

}  // namespace fvlfp::num
