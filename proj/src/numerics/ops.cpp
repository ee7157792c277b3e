#include "fvlfp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "fvlfp/error.hpp"
#include "numerics/gemm.hpp"

namespace fvlfp::num::ops {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shapes differ " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + a.shape_string());
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var matmul(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul inner dimensions differ: " + A.shape_string() + " x " +
                         B.shape_string());
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out({m, n});
  detail::gemm_nn(m, k, n, A.data(), B.data(), out.data(), false);
  return g.record(std::move(out), {a, b}, "matmul", [a, b, m, k, n](Graph& g, const Tensor& dy) {
    if (g.requires_grad(a)) {
      detail::gemm_nt(m, n, k, dy.data(), g.value(b).data(), g.grad_of(a).data(), true);
    }
    if (g.requires_grad(b)) {
      detail::gemm_tn(k, m, n, g.value(a).data(), dy.data(), g.grad_of(b).data(), true);
    }
  });
}

Var matmul_nt(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  if (A.cols() != B.cols()) {
    throw DimensionError("matmul_nt inner dimensions differ: " + A.shape_string() + " x " +
                         B.shape_string() + "^T");
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor out({m, n});
  detail::gemm_nt(m, k, n, A.data(), B.data(), out.data(), false);
  return g.record(std::move(out), {a, b}, "matmul_nt", [a, b, m, k, n](Graph& g, const Tensor& dy) {
    if (g.requires_grad(a)) {
      detail::gemm_nn(m, n, k, dy.data(), g.value(b).data(), g.grad_of(a).data(), true);
    }
    if (g.requires_grad(b)) {
      detail::gemm_tn(n, m, k, dy.data(), g.value(a).data(), g.grad_of(b).data(), true);
    }
  });
}

Var linear(Graph& g, Var x, Var w, Var bias) {
  const Tensor& X = g.value(x);
  const Tensor& W = g.value(w);
  if (X.cols() != W.rows()) {
    throw DimensionError("linear: input " + X.shape_string() + " does not fit weight " +
                         W.shape_string());
  }
  const std::size_t m = X.rows(), k = X.cols(), n = W.cols();
  Tensor out({m, n});
  detail::gemm_nn(m, k, n, X.data(), W.data(), out.data(), false);
  if (bias.valid()) {
    const Tensor& b = g.value(bias);
    if (b.size() != n) throw DimensionError("linear: bias length mismatch");
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  }
  std::vector<Var> inputs{x, w};
  if (bias.valid()) inputs.push_back(bias);
  return g.record(std::move(out), inputs, "linear", [x, w, bias, m, k, n](Graph& g, const Tensor& dy) {
    if (g.requires_grad(x)) {
      detail::gemm_nt(m, n, k, dy.data(), g.value(w).data(), g.grad_of(x).data(), true);
    }
    if (g.requires_grad(w)) {
      detail::gemm_tn(k, m, n, g.value(x).data(), dy.data(), g.grad_of(w).data(), true);
    }
    if (bias.valid() && g.requires_grad(bias)) {
      Tensor& db = g.grad_of(bias);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[j] += dy[i * n + j];
    }
  });
}

Var add(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  require_same_shape(A, B, "add");
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return g.record(std::move(out), {a, b}, "add", [a, b](Graph& g, const Tensor& dy) {
    if (g.requires_grad(a)) accumulate(g.grad_of(a), dy);
    if (g.requires_grad(b)) accumulate(g.grad_of(b), dy);
  });
}

Var sub(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  require_same_shape(A, B, "sub");
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return g.record(std::move(out), {a, b}, "sub", [a, b](Graph& g, const Tensor& dy) {
    if (g.requires_grad(a)) accumulate(g.grad_of(a), dy);
    if (g.requires_grad(b)) {
      Tensor& db = g.grad_of(b);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] -= dy[i];
    }
  });
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  require_same_shape(A, B, "mul");
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return g.record(std::move(out), {a, b}, "mul", [a, b](Graph& g, const Tensor& dy) {
    if (g.requires_grad(a)) {
      const Tensor& B = g.value(b);
      Tensor& da = g.grad_of(a);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * B[i];
    }
    if (g.requires_grad(b)) {
      const Tensor& A = g.value(a);
      Tensor& db = g.grad_of(b);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * A[i];
    }
  });
}

Var scale(Graph& g, Var a, double s) {
  Tensor out = g.value(a);
  for (auto& v : out.values()) v *= s;
  return g.record(std::move(out), {a}, "scale", [a, s](Graph& g, const Tensor& dy) {
    Tensor& da = g.grad_of(a);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += s * dy[i];
  });
}

Var add_scalar(Graph& g, Var a, double s) {
  Tensor out = g.value(a);
  for (auto& v : out.values()) v += s;
  return g.record(std::move(out), {a}, "add_scalar",
                  [a](Graph& g, const Tensor& dy) { accumulate(g.grad_of(a), dy); });
}

Var add_row(Graph& g, Var x, Var row) {
  const Tensor& X = g.value(x);
  const Tensor& R = g.value(row);
  const std::size_t m = X.rows(), n = X.cols();
  if (R.size() != n) throw DimensionError("add_row: row length " + std::to_string(R.size()) +
                                          " vs " + std::to_string(n) + " columns");
  Tensor out = X;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += R[j];
  return g.record(std::move(out), {x, row}, "add_row", [x, row, m, n](Graph& g, const Tensor& dy) {
    if (g.requires_grad(x)) accumulate(g.grad_of(x), dy);
    if (g.requires_grad(row)) {
      Tensor& dr = g.grad_of(row);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dr[j] += dy[i * n + j];
    }
  });
}

Var sum(Graph& g, Var a) {
  double s = 0.0;
  for (double v : g.value(a).values()) s += v;
  return g.record(Tensor::scalar(s), {a}, "sum", [a](Graph& g, const Tensor& dy) {
    Tensor& da = g.grad_of(a);
    const double d = dy[0];
    for (auto& v : da.values()) v += d;
  });
}

Var mean(Graph& g, Var a) {
  const Tensor& A = g.value(a);
  if (A.size() == 0) throw DimensionError("mean of an empty tensor");
  const double n = static_cast<double>(A.size());
  double s = 0.0;
  for (double v : A.values()) s += v;
  return g.record(Tensor::scalar(s / n), {a}, "mean", [a, n](Graph& g, const Tensor& dy) {
    Tensor& da = g.grad_of(a);
    const double d = dy[0] / n;
    for (auto& v : da.values()) v += d;
  });
}

namespace {

// Visits each softmax lane of `t`: calls f(offset, stride, length).
template <class F>
void for_each_lane(const Tensor& t, int axis, F&& f) {
  if (t.rank() <= 1) {
    f(std::size_t{0}, std::size_t{1}, t.size());
    return;
  }
  const std::size_t r = t.rows(), c = t.cols();
  if (axis == 1) {
    for (std::size_t i = 0; i < r; ++i) f(i * c, std::size_t{1}, c);
  } else {
    for (std::size_t j = 0; j < c; ++j) f(j, c, r);
  }
}

void check_axis(const Tensor& t, int axis, const char* op) {
  if (t.rank() > 2 || axis < 0 || axis > 1 || (t.rank() <= 1 && axis != 0)) {
    throw DimensionError(std::string(op) + ": invalid axis " + std::to_string(axis) +
                         " for shape " + t.shape_string());
  }
  const std::size_t len = t.rank() <= 1 ? t.size() : (axis == 1 ? t.cols() : t.rows());
  if (len == 0) throw DimensionError(std::string(op) + ": empty axis");
}

}  // namespace

Var softmax(Graph& g, Var a, int axis) {
  const Tensor& A = g.value(a);
  check_axis(A, axis, "softmax");
  Tensor out(A.shape());
  for_each_lane(A, axis, [&](std::size_t off, std::size_t stride, std::size_t len) {
    double m = A[off];
    for (std::size_t i = 1; i < len; ++i) m = std::max(m, A[off + i * stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double e = std::exp(A[off + i * stride] - m);
      out[off + i * stride] = e;
      z += e;
    }
    for (std::size_t i = 0; i < len; ++i) out[off + i * stride] /= z;
  });
  auto y = std::make_shared<const Tensor>(std::move(out));
  return g.record(Tensor(*y), {a}, "softmax", [a, axis, y](Graph& g, const Tensor& dy) {
    const Tensor& Y = *y;
    Tensor& da = g.grad_of(a);
    for_each_lane(Y, axis, [&](std::size_t off, std::size_t stride, std::size_t len) {
      double s = 0.0;
      for (std::size_t i = 0; i < len; ++i) s += dy[off + i * stride] * Y[off + i * stride];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t p = off + i * stride;
        da[p] += Y[p] * (dy[p] - s);
      }
    });
  });
}

Var log_softmax(Graph& g, Var a, int axis) {
  const Tensor& A = g.value(a);
  check_axis(A, axis, "log_softmax");
  Tensor out(A.shape());
  auto probs = std::make_shared<Tensor>(A.shape());
  for_each_lane(A, axis, [&](std::size_t off, std::size_t stride, std::size_t len) {
    double m = A[off];
    for (std::size_t i = 1; i < len; ++i) m = std::max(m, A[off + i * stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) z += std::exp(A[off + i * stride] - m);
    const double lz = m + std::log(z);
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t p = off + i * stride;
      out[p] = A[p] - lz;
      (*probs)[p] = std::exp(out[p]);
    }
  });
  return g.record(std::move(out), {a}, "log_softmax", [a, axis, probs](Graph& g, const Tensor& dy) {
    Tensor& da = g.grad_of(a);
    const Tensor& P = *probs;
    for_each_lane(P, axis, [&](std::size_t off, std::size_t stride, std::size_t len) {
      double s = 0.0;
      for (std::size_t i = 0; i < len; ++i) s += dy[off + i * stride];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t p = off + i * stride;
        da[p] += dy[p] - P[p] * s;
      }
    });
  });
}

Var layernorm(Graph& g, Var x, Var gain, Var bias, double eps) {
  if (!(eps > 0.0)) throw Error("layernorm: eps must be positive");
  const Tensor& X = g.value(x);
  const Tensor& G = g.value(gain);
  const Tensor& B = g.value(bias);
  const std::size_t m = X.rows(), n = X.cols();
  if (G.size() != n || B.size() != n) throw DimensionError("layernorm: gain/bias length mismatch");
  Tensor out(X.shape());
  auto xhat = std::make_shared<Tensor>(X.shape());
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = X.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xi[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xi[j] - mu) * is;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * G[j] + B[j];
    }
  }
  return g.record(std::move(out), {x, gain, bias}, "layernorm",
                  [x, gain, bias, m, n, xhat, inv_std](Graph& g, const Tensor& dy) {
                    const Tensor& G = g.value(gain);
                    const Tensor& H = *xhat;
                    if (g.requires_grad(gain)) {
                      Tensor& dg = g.grad_of(gain);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) dg[j] += dy[i * n + j] * H[i * n + j];
                    }
                    if (g.requires_grad(bias)) {
                      Tensor& db = g.grad_of(bias);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) db[j] += dy[i * n + j];
                    }
                    if (g.requires_grad(x)) {
                      Tensor& dx = g.grad_of(x);
                      const double nn = static_cast<double>(n);
                      for (std::size_t i = 0; i < m; ++i) {
                        double s1 = 0.0, s2 = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                          const double dh = dy[i * n + j] * G[j];
                          s1 += dh;
                          s2 += dh * H[i * n + j];
                        }
                        const double is = (*inv_std)[i];
                        for (std::size_t j = 0; j < n; ++j) {
                          const double dh = dy[i * n + j] * G[j];
                          dx[i * n + j] += is * (dh - s1 / nn - H[i * n + j] * s2 / nn);
                        }
                      }
                    }
                  });
}

Var gelu(Graph& g, Var x) {
  const Tensor& X = g.value(x);
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    out[i] = 0.5 * X[i] * (1.0 + std::erf(X[i] * std::numbers::sqrt2 * 0.5));
  }
  return g.record(std::move(out), {x}, "gelu", [x](Graph& g, const Tensor& dy) {
    const Tensor& X = g.value(x);
    Tensor& dx = g.grad_of(x);
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < X.size(); ++i) {
      const double v = X[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      dx[i] += dy[i] * (cdf + v * pdf);
    }
  });
}

Var log(Graph& g, Var a) {
  const Tensor& A = g.value(a);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) {
    if (!(A[i] > 0.0)) throw NumericError("log of a non-positive value");
    out[i] = std::log(A[i]);
  }
  return g.record(std::move(out), {a}, "log", [a](Graph& g, const Tensor& dy) {
    const Tensor& A = g.value(a);
    Tensor& da = g.grad_of(a);
    for (std::size_t i = 0; i < A.size(); ++i) da[i] += dy[i] / A[i];
  });
}

Var abs(Graph& g, Var a) {
  const Tensor& A = g.value(a);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = std::abs(A[i]);
  return g.record(std::move(out), {a}, "abs", [a](Graph& g, const Tensor& dy) {
    const Tensor& A = g.value(a);
    Tensor& da = g.grad_of(a);
    for (std::size_t i = 0; i < A.size(); ++i) {
      if (A[i] > 0.0) da[i] += dy[i];
      else if (A[i] < 0.0) da[i] -= dy[i];
    }
  });
}

Var hinge(Graph& g, Var a, double margin) {
  const Tensor& A = g.value(a);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = std::max(0.0, A[i] - margin);
  return g.record(std::move(out), {a}, "hinge", [a, margin](Graph& g, const Tensor& dy) {
    const Tensor& A = g.value(a);
    Tensor& da = g.grad_of(a);
    for (std::size_t i = 0; i < A.size(); ++i)
      if (A[i] > margin) da[i] += dy[i];
  });
}

Var l2_normalize_rows(Graph& g, Var x) {
  const Tensor& X = g.value(x);
  const std::size_t m = X.rows(), n = X.cols();
  Tensor out(X.shape());
  auto norms = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double nr = norm2(X.row(i));
    if (!(nr > 0.0)) throw NumericError("l2_normalize_rows: zero-norm row");
    (*norms)[i] = nr;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = X[i * n + j] / nr;
  }
  auto y = std::make_shared<const Tensor>(out);
  return g.record(std::move(out), {x}, "l2_normalize_rows", [x, m, n, norms, y](Graph& g, const Tensor& dy) {
    const Tensor& Y = *y;
    Tensor& dx = g.grad_of(x);
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += dy[i * n + j] * Y[i * n + j];
      const double inv = 1.0 / (*norms)[i];
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += inv * (dy[i * n + j] - Y[i * n + j] * s);
    }
  });
}

Var row_dot(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  require_same_shape(A, B, "row_dot");
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) out[i] = dot(A.row(i), B.row(i));
  return g.record(std::move(out), {a, b}, "row_dot", [a, b, m, n](Graph& g, const Tensor& dy) {
    if (g.requires_grad(a)) {
      const Tensor& B = g.value(b);
      Tensor& da = g.grad_of(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) da[i * n + j] += dy[i] * B[i * n + j];
    }
    if (g.requires_grad(b)) {
      const Tensor& A = g.value(a);
      Tensor& db = g.grad_of(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[i * n + j] += dy[i] * A[i * n + j];
    }
  });
}

Var cosine_rows(Graph& g, Var a, Var b) {
  return row_dot(g, l2_normalize_rows(g, a), l2_normalize_rows(g, b));
}

Var matvec(Graph& g, Var x, Var v) {
  const Tensor& X = g.value(x);
  const Tensor& V = g.value(v);
  const std::size_t m = X.rows(), n = X.cols();
  if (V.size() != n) throw DimensionError("matvec: vector length mismatch");
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) out[i] = dot(X.row(i), V.values());
  return g.record(std::move(out), {x, v}, "matvec", [x, v, m, n](Graph& g, const Tensor& dy) {
    if (g.requires_grad(x)) {
      const Tensor& V = g.value(v);
      Tensor& dx = g.grad_of(x);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += dy[i] * V[j];
    }
    if (g.requires_grad(v)) {
      const Tensor& X = g.value(x);
      Tensor& dv = g.grad_of(v);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dv[j] += dy[i] * X[i * n + j];
    }
  });
}

Var transpose(Graph& g, Var a) {
  const Tensor& A = g.value(a);
  require_matrix(A, "transpose");
  return g.record(A.transposed(), {a}, "transpose", [a](Graph& g, const Tensor& dy) {
    accumulate(g.grad_of(a), dy.transposed());
  });
}

Var reshape(Graph& g, Var a, std::vector<std::size_t> shape) {
  const Tensor& A = g.value(a);
  if (element_count(shape) != A.size()) throw DimensionError("reshape: element count changes");
  return g.record(A.reshaped(std::move(shape)), {a}, "reshape",
                  [a](Graph& g, const Tensor& dy) {
                    Tensor& da = g.grad_of(a);
                    for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
                  });
}

Var gather_rows(Graph& g, const std::vector<Var>& sources, std::vector<RowRef> map) {
  if (sources.empty()) throw DimensionError("gather_rows: no sources");
  const std::size_t n = g.value(sources[0]).cols();
  for (auto s : sources) {
    if (g.value(s).cols() != n) throw DimensionError("gather_rows: sources differ in width");
  }
  Tensor out({map.size(), n});
  for (std::size_t i = 0; i < map.size(); ++i) {
    const auto [src, r] = map[i];
    if (src >= sources.size()) throw DimensionError("gather_rows: bad source index");
    const Tensor& S = g.value(sources[src]);
    if (r >= S.rows()) throw DimensionError("gather_rows: row out of range");
    std::copy_n(S.data() + r * n, n, out.data() + i * n);
  }
  auto shared_map = std::make_shared<std::vector<RowRef>>(std::move(map));
  return g.record(std::move(out), sources, "gather_rows",
                  [sources, shared_map, n](Graph& g, const Tensor& dy) {
                    std::vector<Tensor*> grads(sources.size(), nullptr);
                    for (std::size_t s = 0; s < sources.size(); ++s)
                      if (g.requires_grad(sources[s])) grads[s] = &g.grad_of(sources[s]);
                    const auto& m = *shared_map;
                    for (std::size_t i = 0; i < m.size(); ++i) {
                      Tensor* dst = grads[m[i].first];
                      if (!dst) continue;
                      double* d = dst->data() + m[i].second * n;
                      const double* s = dy.data() + i * n;
                      for (std::size_t j = 0; j < n; ++j) d[j] += s[j];
                    }
                  });
}

Var slice_rows(Graph& g, Var a, std::size_t begin, std::size_t count) {
  std::vector<RowRef> map(count);
  for (std::size_t i = 0; i < count; ++i) map[i] = {0, begin + i};
  return gather_rows(g, {a}, std::move(map));
}

Var concat_rows(Graph& g, const std::vector<Var>& parts) {
  std::vector<RowRef> map;
  for (std::size_t s = 0; s < parts.size(); ++s) {
    const std::size_t r = g.value(parts[s]).rows();
    for (std::size_t i = 0; i < r; ++i) map.emplace_back(s, i);
  }
  return gather_rows(g, parts, std::move(map));
}

Var concat_cols(Graph& g, const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const Tensor& first = g.value(parts[0]);
  const std::size_t m = first.rank() <= 1 ? first.size() : first.rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (auto p : parts) {
    const Tensor& t = g.value(p);
    const std::size_t r = t.rank() <= 1 ? t.size() : t.rows();
    const std::size_t c = t.rank() <= 1 ? 1 : t.cols();
    if (r != m) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(c);
    total += c;
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (std::size_t s = 0; s < parts.size(); ++s) {
    const Tensor& t = g.value(parts[s]);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[s]; ++j) out[i * total + off + j] = t[i * widths[s] + j];
    off += widths[s];
  }
  return g.record(std::move(out), parts, "concat_cols", [parts, widths, m, total](Graph& g, const Tensor& dy) {
    std::size_t off = 0;
    for (std::size_t s = 0; s < parts.size(); ++s) {
      if (g.requires_grad(parts[s])) {
        Tensor& d = g.grad_of(parts[s]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[s]; ++j) d[i * widths[s] + j] += dy[i * total + off + j];
      }
      off += widths[s];
    }
  });
}

Var column(Graph& g, Var a, std::size_t j) {
  const Tensor& A = g.value(a);
  require_matrix(A, "column");
  const std::size_t m = A.rows(), n = A.cols();
  if (j >= n) throw DimensionError("column: index out of range");
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) out[i] = A[i * n + j];
  return g.record(std::move(out), {a}, "column", [a, j, m, n](Graph& g, const Tensor& dy) {
    Tensor& da = g.grad_of(a);
    for (std::size_t i = 0; i < m; ++i) da[i * n + j] += dy[i];
  });
}

Var pick(Graph& g, Var a, std::vector<std::size_t> index) {
  const Tensor& A = g.value(a);
  const std::size_t m = A.rows(), n = A.cols();
  if (index.size() != m) throw DimensionError("pick: one index per row required");
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    if (index[i] >= n) throw DimensionError("pick: index out of range");
    out[i] = A[i * n + index[i]];
  }
  return g.record(std::move(out), {a}, "pick", [a, index = std::move(index), n](Graph& g, const Tensor& dy) {
    Tensor& da = g.grad_of(a);
    for (std::size_t i = 0; i < index.size(); ++i) da[i * n + index[i]] += dy[i];
  });
}

Var mean_row_groups(Graph& g, Var x, std::size_t group) {
  const Tensor& X = g.value(x);
  if (group == 0 || X.rows() % group != 0) {
    throw DimensionError("mean_row_groups: " + std::to_string(X.rows()) +
                         " rows not divisible into groups of " + std::to_string(group));
  }
  const std::size_t blocks = X.rows() / group, n = X.cols();
  Tensor out({blocks, n});
  const double inv = 1.0 / static_cast<double>(group);
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t r = 0; r < group; ++r)
      for (std::size_t j = 0; j < n; ++j) out[b * n + j] += X[(b * group + r) * n + j] * inv;
  return g.record(std::move(out), {x}, "mean_row_groups", [x, group, blocks, n, inv](Graph& g, const Tensor& dy) {
    Tensor& dx = g.grad_of(x);
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t r = 0; r < group; ++r)
        for (std::size_t j = 0; j < n; ++j) dx[(b * group + r) * n + j] += dy[b * n + j] * inv;
  });
}

Var scale_row_groups(Graph& g, Var x, Var s, std::size_t group) {
  const Tensor& X = g.value(x);
  const Tensor& S = g.value(s);
  if (group == 0 || X.rows() != S.size() * group) {
    throw DimensionError("scale_row_groups: " + std::to_string(X.rows()) + " rows vs " +
                         std::to_string(S.size()) + " scales of group " + std::to_string(group));
  }
  const std::size_t blocks = S.size(), n = X.cols();
  Tensor out(X.shape());
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t r = 0; r < group; ++r)
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t p = (b * group + r) * n + j;
        out[p] = X[p] * S[b];
      }
  return g.record(std::move(out), {x, s}, "scale_row_groups", [x, s, group, blocks, n](Graph& g, const Tensor& dy) {
    const Tensor& X = g.value(x);
    const Tensor& S = g.value(s);
    if (g.requires_grad(x)) {
      Tensor& dx = g.grad_of(x);
      for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t r = 0; r < group; ++r)
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t p = (b * group + r) * n + j;
            dx[p] += dy[p] * S[b];
          }
    }
    if (g.requires_grad(s)) {
      Tensor& ds = g.grad_of(s);
      for (std::size_t b = 0; b < blocks; ++b) {
        double acc = 0.0;
        for (std::size_t r = 0; r < group; ++r)
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t p = (b * group + r) * n + j;
            acc += dy[p] * X[p];
          }
        ds[b] += acc;
      }
    }
  });
}

Var attention(Graph& g, Var qkv, std::size_t batch, std::size_t seq, std::size_t heads) {
  const Tensor& QKV = g.value(qkv);
  if (QKV.rank() != 2 || QKV.rows() != batch * seq || QKV.cols() % 3 != 0) {
    throw DimensionError("attention: qkv shape " + QKV.shape_string() + " does not match batch " +
                         std::to_string(batch) + " x seq " + std::to_string(seq));
  }
  const std::size_t d = QKV.cols() / 3;
  if (heads == 0 || d % heads != 0) throw DimensionError("attention: width not divisible by heads");
  const std::size_t dh = d / heads, w = 3 * d;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out({batch * seq, d});
  auto probs = std::make_shared<std::vector<double>>(batch * heads * seq * seq);
  std::vector<double> row(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* base = QKV.data() + b * seq * w;
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs->data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const double* qi = base + i * w + h * dh;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < seq; ++j) {
          const double* kj = base + j * w + d + h * dh;
          double s = 0.0;
          for (std::size_t p = 0; p < dh; ++p) s += qi[p] * kj[p];
          row[j] = s * inv_sqrt;
          mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        double* oi = out.data() + (b * seq + i) * d + h * dh;
        for (std::size_t j = 0; j < seq; ++j) {
          const double pij = row[j] / z;
          P[i * seq + j] = pij;
          const double* vj = base + j * w + 2 * d + h * dh;
          for (std::size_t p = 0; p < dh; ++p) oi[p] += pij * vj[p];
        }
      }
    }
  }
  return g.record(std::move(out), {qkv}, "attention",
                  [qkv, batch, seq, heads, d, dh, w, inv_sqrt, probs](Graph& g, const Tensor& dy) {
                    const Tensor& QKV = g.value(qkv);
                    Tensor& dqkv = g.grad_of(qkv);
                    std::vector<double> dP(seq * seq);
                    for (std::size_t b = 0; b < batch; ++b) {
                      const double* base = QKV.data() + b * seq * w;
                      double* dbase = dqkv.data() + b * seq * w;
                      for (std::size_t h = 0; h < heads; ++h) {
                        const double* P = probs->data() + (b * heads + h) * seq * seq;
                        // dP = dO V^T ; dV = P^T dO
                        for (std::size_t i = 0; i < seq; ++i) {
                          const double* doi = dy.data() + (b * seq + i) * d + h * dh;
                          for (std::size_t j = 0; j < seq; ++j) {
                            const double* vj = base + j * w + 2 * d + h * dh;
                            double s = 0.0;
                            for (std::size_t p = 0; p < dh; ++p) s += doi[p] * vj[p];
                            dP[i * seq + j] = s;
                            double* dvj = dbase + j * w + 2 * d + h * dh;
                            const double pij = P[i * seq + j];
                            for (std::size_t p = 0; p < dh; ++p) dvj[p] += pij * doi[p];
                          }
                        }
                        // dS = P * (dP - rowsum(dP * P)), then dQ = dS K, dK = dS^T Q.
                        for (std::size_t i = 0; i < seq; ++i) {
                          double s = 0.0;
                          for (std::size_t j = 0; j < seq; ++j) s += dP[i * seq + j] * P[i * seq + j];
                          const double* qi = base + i * w + h * dh;
                          double* dqi = dbase + i * w + h * dh;
                          for (std::size_t j = 0; j < seq; ++j) {
                            const double ds = P[i * seq + j] * (dP[i * seq + j] - s) * inv_sqrt;
                            const double* kj = base + j * w + d + h * dh;
                            double* dkj = dbase + j * w + d + h * dh;
                            for (std::size_t p = 0; p < dh; ++p) {
                              dqi[p] += ds * kj[p];
                              dkj[p] += ds * qi[p];
                            }
                          }
                        }
                      }
                    }
                  });
}

}  // namespace fvlfp::num::ops
