// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations on Tensor. Every op validates shapes, computes
// its value eagerly and registers a backward closure that accumulates into
// the gradients of inputs that require them.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tmdc/tensor.hpp"

namespace tmdc {

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw DimensionError(what);
}

inline std::string shapes_msg(const char* op, const Tensor& a, const Tensor& b) {
  return std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape());
}

/// b broadcasts against a when its shape equals a trailing suffix of a's
/// shape (this includes the scalar shape []).
inline bool is_suffix(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

inline Node& in(Node& self, std::size_t i) { return *self.inputs[i]; }

template <class Fwd, class Da, class Db>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
  require(is_suffix(a.shape(), b.shape()), shapes_msg(op, a, b));
  const std::size_t n = a.numel();
  const std::size_t nb = b.numel();
  std::vector<double> out(n);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i % nb]);
  return make_result(op, a.shape(), std::move(out), {&a, &b}, [n, nb, da, db](Node& self) {
    Node& na = in(self, 0);
    Node& nb_ = in(self, 1);
    const auto& g = self.grad;
    if (na.requires_grad) {
      auto& ga = na.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * da(na.value[i], nb_.value[i % nb]);
    }
    if (nb_.requires_grad) {
      auto& gb = nb_.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i] * db(na.value[i], nb_.value[i % nb]);
    }
  });
}

template <class Fwd, class Dx>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Dx dx) {
  const std::size_t n = x.numel();
  std::vector<double> out(n);
  auto xv = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(xv[i]);
  return make_result(op, x.shape(), std::move(out), {&x}, [n, dx](Node& self) {
    Node& nx = in(self, 0);
    auto& gx = nx.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[i] * dx(nx.value[i], self.value[i]);
  });
}

inline double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(
      "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary(
      "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Tensor softplus(const Tensor& x) {
  return detail::unary(
      "softplus", x, [](double v) { return detail::softplus_value(v); },
      [](double v, double) { return detail::sigmoid(v); });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return detail::unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const std::size_t n = x.numel();
  return detail::make_result("sum", Shape{}, {s}, {&x}, [n](detail::Node& self) {
    auto& gx = detail::in(self, 0).grad_buffer();
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

/// [..., T, D] -> [..., D], arithmetic mean along the sequence axis.
inline Tensor mean_over_time(const Tensor& x) {
  detail::require(x.ndim() >= 2, "mean_over_time: needs rank >= 2, got " + to_string(x.shape()));
  const std::size_t T = x.dim(-2);
  const std::size_t D = x.dim(-1);
  const std::size_t outer = x.numel() / (T * D);
  Shape shape(x.shape().begin(), x.shape().end() - 2);
  shape.push_back(D);
  std::vector<double> out(outer * D, 0.0);
  auto xv = x.data();
  const double inv = 1.0 / static_cast<double>(T);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d) out[o * D + d] += xv[(o * T + t) * D + d] * inv;
  return detail::make_result("mean_over_time", std::move(shape), std::move(out), {&x},
                             [outer, T, D, inv](detail::Node& self) {
                               auto& gx = detail::in(self, 0).grad_buffer();
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t t = 0; t < T; ++t)
                                   for (std::size_t d = 0; d < D; ++d)
                                     gx[(o * T + t) * D + d] += self.grad[o * D + d] * inv;
                             });
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {

// C[M,N] += A[M,K] * B[K,N]. Rows are processed four at a time; each
// output element still accumulates over k in order.
inline void gemm_nn(const double* __restrict A, const double* __restrict B, double* __restrict C, std::size_t M,
                    std::size_t K, std::size_t N) {
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) {
    double* __restrict c0 = C + i * N;
    double* __restrict c1 = c0 + N;
    double* __restrict c2 = c1 + N;
    double* __restrict c3 = c2 + N;
    for (std::size_t k = 0; k < K; ++k) {
      const double a0 = A[i * K + k], a1 = A[(i + 1) * K + k], a2 = A[(i + 2) * K + k], a3 = A[(i + 3) * K + k];
      const double* __restrict b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) {
        const double bj = b[j];
        c0[j] += a0 * bj;
        c1[j] += a1 * bj;
        c2[j] += a2 * bj;
        c3[j] += a3 * bj;
      }
    }
  }
  for (; i < M; ++i) {
    double* __restrict c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double a = A[i * K + k];
      const double* __restrict b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

// C[M,K] += G[M,N] * B[K,N]^T
inline void gemm_nt(const double* __restrict G, const double* __restrict B, double* __restrict C, std::size_t M,
                    std::size_t K, std::size_t N) {
  std::vector<double> bt(N * K), row(K);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < N; ++j) bt[j * K + k] = B[k * N + j];
  for (std::size_t i = 0; i < M; ++i) {
    const double* __restrict g = G + i * N;
    double* __restrict r = row.data();
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t j = 0; j < N; ++j) {
      const double gj = g[j];
      const double* __restrict b = bt.data() + j * K;
      for (std::size_t k = 0; k < K; ++k) r[k] += gj * b[k];
    }
    double* __restrict c = C + i * K;
    for (std::size_t k = 0; k < K; ++k) c[k] += r[k];
  }
}

// C[K,N] += A[M,K]^T * G[M,N]
inline void gemm_tn(const double* __restrict A, const double* __restrict G, double* __restrict C, std::size_t M,
                    std::size_t K, std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* __restrict g = G + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double a = A[i * K + k];
      double* __restrict c = C + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * g[j];
    }
  }
}

}  // namespace detail

/// a[..., M, K] x b[K, N] (b shared across the batch) or
/// a[..., M, K] x b[..., K, N] (identical batch dims). A rank-1 `a` is a
/// single row and yields a rank-1 result.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::string msg = detail::shapes_msg("matmul", a, b);
  detail::require(a.ndim() >= 1 && b.ndim() >= 2, msg);
  const std::size_t K = a.dim(-1);
  detail::require(b.dim(-2) == K, msg);
  const std::size_t N = b.dim(-1);
  Shape shape = a.shape();
  shape.back() = N;
  if (b.ndim() == 2) {
    const std::size_t M = a.numel() / K;
    std::vector<double> out(M * N, 0.0);
    detail::gemm_nn(a.data().data(), b.data().data(), out.data(), M, K, N);
    return detail::make_result("matmul", std::move(shape), std::move(out), {&a, &b}, [M, K, N](detail::Node& self) {
      detail::Node& na = detail::in(self, 0);
      detail::Node& nb = detail::in(self, 1);
      if (na.requires_grad) detail::gemm_nt(self.grad.data(), nb.value.data(), na.grad_buffer().data(), M, K, N);
      if (nb.requires_grad) detail::gemm_tn(na.value.data(), self.grad.data(), nb.grad_buffer().data(), M, K, N);
    });
  }
  detail::require(a.ndim() == b.ndim() && std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()), msg);
  const std::size_t M = a.dim(-2);
  const std::size_t batch = a.numel() / (M * K);
  std::vector<double> out(batch * M * N, 0.0);
  for (std::size_t s = 0; s < batch; ++s)
    detail::gemm_nn(a.data().data() + s * M * K, b.data().data() + s * K * N, out.data() + s * M * N, M, K, N);
  return detail::make_result("matmul", std::move(shape), std::move(out), {&a, &b},
                             [batch, M, K, N](detail::Node& self) {
                               detail::Node& na = detail::in(self, 0);
                               detail::Node& nb = detail::in(self, 1);
                               for (std::size_t s = 0; s < batch; ++s) {
                                 const double* g = self.grad.data() + s * M * N;
                                 if (na.requires_grad)
                                   detail::gemm_nt(g, nb.value.data() + s * K * N, na.grad_buffer().data() + s * M * K,
                                                   M, K, N);
                                 if (nb.requires_grad)
                                   detail::gemm_tn(na.value.data() + s * M * K, g, nb.grad_buffer().data() + s * K * N,
                                                   M, K, N);
                               }
                             });
}

/// Swaps the last two axes.
inline Tensor transpose_last2(const Tensor& x) {
  detail::require(x.ndim() >= 2, "transpose_last2: needs rank >= 2, got " + to_string(x.shape()));
  const std::size_t R = x.dim(-2);
  const std::size_t C = x.dim(-1);
  const std::size_t batch = x.numel() / (R * C);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) out[s * R * C + c * R + r] = xv[s * R * C + r * C + c];
  return detail::make_result("transpose_last2", std::move(shape), std::move(out), {&x},
                             [batch, R, C](detail::Node& self) {
                               auto& gx = detail::in(self, 0).grad_buffer();
                               for (std::size_t s = 0; s < batch; ++s)
                                 for (std::size_t r = 0; r < R; ++r)
                                   for (std::size_t c = 0; c < C; ++c)
                                     gx[s * R * C + r * C + c] += self.grad[s * R * C + c * R + r];
                             });
}

// ---------------------------------------------------------------------------
// Softmax and losses

/// Row-wise softmax over the last axis, max-subtracted.
inline Tensor softmax_lastdim(const Tensor& x) {
  detail::require(x.ndim() >= 1, "softmax_lastdim: needs rank >= 1");
  const std::size_t N = x.dim(-1);
  const std::size_t rows = x.numel() / N;
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * N;
    const double m = *std::max_element(row, row + N);
    double z = 0.0;
    for (std::size_t j = 0; j < N; ++j) z += (out[r * N + j] = std::exp(row[j] - m));
    for (std::size_t j = 0; j < N; ++j) out[r * N + j] /= z;
  }
  return detail::make_result("softmax_lastdim", x.shape(), std::move(out), {&x}, [rows, N](detail::Node& self) {
    auto& gx = detail::in(self, 0).grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * N;
      const double* g = self.grad.data() + r * N;
      double dot = 0.0;
      for (std::size_t j = 0; j < N; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < N; ++j) gx[r * N + j] += y[j] * (g[j] - dot);
    }
  });
}

/// Mean negative log-likelihood of `labels` under softmax(logits).
/// logits: [B, C] (or [C] with a single label).
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  const std::size_t C = logits.dim(-1);
  const std::size_t B = logits.numel() / C;
  detail::require(labels.size() == B, "cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                                          to_string(logits.shape()));
  std::vector<double> probs(logits.numel());
  double loss = 0.0;
  auto lv = logits.data();
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] >= C) throw DomainError("cross_entropy: label " + std::to_string(labels[b]) + " out of range");
    const double* row = lv.data() + b * C;
    const double m = *std::max_element(row, row + C);
    double z = 0.0;
    for (std::size_t j = 0; j < C; ++j) z += (probs[b * C + j] = std::exp(row[j] - m));
    for (std::size_t j = 0; j < C; ++j) probs[b * C + j] /= z;
    loss += -(row[labels[b]] - m - std::log(z));
  }
  loss /= static_cast<double>(B);
  return detail::make_result("cross_entropy", Shape{}, {loss}, {&logits},
                             [B, C, labels, probs = std::move(probs)](detail::Node& self) {
                               auto& gx = detail::in(self, 0).grad_buffer();
                               const double g = self.grad[0] / static_cast<double>(B);
                               for (std::size_t b = 0; b < B; ++b)
                                 for (std::size_t j = 0; j < C; ++j)
                                   gx[b * C + j] += g * (probs[b * C + j] - (j == labels[b] ? 1.0 : 0.0));
                             });
}

/// Mean squared error between every element of `pred` and `targets`.
inline Tensor mse_loss(const Tensor& pred, const std::vector<double>& targets) {
  const std::size_t n = pred.numel();
  detail::require(targets.size() == n, "mse_loss: " + std::to_string(targets.size()) + " targets for prediction " +
                                           to_string(pred.shape()));
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred[i] - targets[i];
    loss += d * d;
  }
  loss /= static_cast<double>(n);
  return detail::make_result("mse_loss", Shape{}, {loss}, {&pred}, [n, targets](detail::Node& self) {
    detail::Node& np = detail::in(self, 0);
    auto& gp = np.grad_buffer();
    const double g = self.grad[0] * 2.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) gp[i] += g * (np.value[i] - targets[i]);
  });
}

// ---------------------------------------------------------------------------
// Structural

/// Order-preserving concatenation along the last axis.
inline Tensor concat_lastdim(const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat_lastdim: empty part list");
  const Shape& lead = parts.front().shape();
  const Shape leading(lead.begin(), lead.end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    detail::require(p.ndim() == lead.size() && std::equal(leading.begin(), leading.end(), p.shape().begin()),
                    detail::shapes_msg("concat_lastdim", parts.front(), p));
    widths.push_back(p.dim(-1));
    total += p.dim(-1);
  }
  const std::size_t rows = numel(leading);
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto pv = parts[i].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.data() + r * widths[i], widths[i], out.data() + r * total + offset);
    offset += widths[i];
  }
  Shape shape = leading;
  shape.push_back(total);
  return detail::make_result("concat_lastdim", std::move(shape), std::move(out), parts,
                             [rows, total, widths](detail::Node& self) {
                               std::size_t off = 0;
                               for (std::size_t i = 0; i < widths.size(); ++i) {
                                 detail::Node& np = detail::in(self, i);
                                 if (np.requires_grad) {
                                   auto& gp = np.grad_buffer();
                                   for (std::size_t r = 0; r < rows; ++r)
                                     for (std::size_t j = 0; j < widths[i]; ++j)
                                       gp[r * widths[i] + j] += self.grad[r * total + off + j];
                                 }
                                 off += widths[i];
                               }
                             });
}

/// Columns [start, start + len) of the last axis.
inline Tensor slice_lastdim(const Tensor& x, std::size_t start, std::size_t len) {
  const std::size_t W = x.dim(-1);
  detail::require(len >= 1 && start + len <= W, "slice_lastdim: [" + std::to_string(start) + ", " +
                                                     std::to_string(start + len) + ") out of range for " +
                                                     to_string(x.shape()));
  const std::size_t rows = x.numel() / W;
  std::vector<double> out(rows * len);
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * W + start, len, out.data() + r * len);
  Shape shape = x.shape();
  shape.back() = len;
  return detail::make_result("slice_lastdim", std::move(shape), std::move(out), {&x},
                             [rows, W, start, len](detail::Node& self) {
                               auto& gx = detail::in(self, 0).grad_buffer();
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t j = 0; j < len; ++j) gx[r * W + start + j] += self.grad[r * len + j];
                             });
}

/// x[i] along the first axis.
inline Tensor index_first(const Tensor& x, std::size_t i) {
  detail::require(x.ndim() >= 2 && i < x.dim(0), "index_first: index " + std::to_string(i) + " out of range for " +
                                                     to_string(x.shape()));
  const std::size_t inner = x.numel() / x.dim(0);
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(i * inner),
                          x.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * inner));
  Shape shape(x.shape().begin() + 1, x.shape().end());
  return detail::make_result("index_first", std::move(shape), std::move(out), {&x}, [i, inner](detail::Node& self) {
    auto& gx = detail::in(self, 0).grad_buffer();
    for (std::size_t j = 0; j < inner; ++j) gx[i * inner + j] += self.grad[j];
  });
}

/// Shifts along the sequence axis (-2): out[t] = x[t - offset], zero where
/// t - offset falls outside [0, L).
inline Tensor shift_time(const Tensor& x, int offset) {
  detail::require(x.ndim() >= 2, "shift_time: needs rank >= 2, got " + to_string(x.shape()));
  const std::size_t L = x.dim(-2);
  const std::size_t D = x.dim(-1);
  const std::size_t outer = x.numel() / (L * D);
  std::vector<double> out(x.numel(), 0.0);
  auto xv = x.data();
  const auto Li = static_cast<long>(L);
  for (std::size_t o = 0; o < outer; ++o)
    for (long t = 0; t < Li; ++t) {
      const long src = t - offset;
      if (src < 0 || src >= Li) continue;
      std::copy_n(xv.data() + (o * L + static_cast<std::size_t>(src)) * D, D,
                  out.data() + (o * L + static_cast<std::size_t>(t)) * D);
    }
  return detail::make_result("shift_time", x.shape(), std::move(out), {&x}, [outer, L, D, offset](detail::Node& self) {
    auto& gx = detail::in(self, 0).grad_buffer();
    const auto Li = static_cast<long>(L);
    for (std::size_t o = 0; o < outer; ++o)
      for (long t = 0; t < Li; ++t) {
        const long src = t - offset;
        if (src < 0 || src >= Li) continue;
        for (std::size_t d = 0; d < D; ++d)
          gx[(o * L + static_cast<std::size_t>(src)) * D + d] += self.grad[(o * L + static_cast<std::size_t>(t)) * D + d];
      }
  });
}

/// Truncates or zero-pads the sequence axis (-2) to length T.
inline Tensor resize_time(const Tensor& x, std::size_t T) {
  detail::require(x.ndim() >= 2 && T >= 1, "resize_time: bad target " + std::to_string(T) + " for " + to_string(x.shape()));
  const std::size_t L = x.dim(-2);
  const std::size_t D = x.dim(-1);
  const std::size_t outer = x.numel() / (L * D);
  const std::size_t keep = std::min(L, T);
  std::vector<double> out(outer * T * D, 0.0);
  auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(xv.data() + o * L * D, keep * D, out.data() + o * T * D);
  Shape shape = x.shape();
  shape[shape.size() - 2] = T;
  return detail::make_result("resize_time", std::move(shape), std::move(out), {&x},
                             [outer, L, T, D, keep](detail::Node& self) {
                               auto& gx = detail::in(self, 0).grad_buffer();
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t j = 0; j < keep * D; ++j) gx[o * L * D + j] += self.grad[o * T * D + j];
                             });
}

/// Zero-pads the last axis to width W (identity when already W).
inline Tensor pad_lastdim(const Tensor& x, std::size_t W) {
  const std::size_t D = x.dim(-1);
  detail::require(W >= D, "pad_lastdim: target " + std::to_string(W) + " narrower than " + to_string(x.shape()));
  if (W == D) return x;
  Shape zshape = x.shape();
  zshape.back() = W - D;
  return concat_lastdim({x, Tensor::zeros(zshape)});
}

}  // namespace tmdc
