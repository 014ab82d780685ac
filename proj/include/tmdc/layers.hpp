// SPDX-License-Identifier: Apache-2.0
//
// Parameterized building blocks: temporal convolution projector, multi-head
// attention, variational information bottleneck, residual affine block,
// pooled prediction head and inverted dropout.
//
// All layers accept an optional leading batch axis: [T, D] or [B, T, D].

#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tmdc/ops.hpp"
#include "tmdc/rng.hpp"

namespace tmdc {

struct LinearParams {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
};

struct Conv1DParams {
  static constexpr std::size_t kWidth = 3;
  Tensor kernel;  // [3, in, out]; tap 0 reads t-1, tap 1 reads t, tap 2 reads t+1
  Tensor bias;    // [out]

  std::size_t in_dim() const { return kernel.dim(1); }
  std::size_t out_dim() const { return kernel.dim(2); }
};

struct MHAParams {
  LinearParams query, key, value, output;
  std::size_t heads = 1;

  std::size_t dim() const { return query.in_dim(); }
  std::size_t head_dim() const { return dim() / heads; }
};

enum class SigmaMode { Softplus, ExpHalfLogVar };

struct VIBParams {
  LinearParams mu_head;
  LinearParams sigma_head;
};

struct VIBOutput {
  Tensor mu;
  Tensor sigma;
  Tensor sample;
  Tensor kl;  // scalar
};

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

inline Tensor uniform_param(const Shape& shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor(shape, std::move(v), true);
}

inline double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace detail

inline LinearParams make_linear(std::size_t in, std::size_t out, Rng& rng) {
  return {detail::uniform_param({in, out}, detail::xavier_bound(in, out), rng), Tensor::zeros({out}, true)};
}

inline Conv1DParams make_conv1d(std::size_t in, std::size_t out, Rng& rng) {
  const std::size_t k = Conv1DParams::kWidth;
  return {detail::uniform_param({k, in, out}, detail::xavier_bound(k * in, k * out), rng), Tensor::zeros({out}, true)};
}

inline MHAParams make_mha(std::size_t dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw DimensionError("mha: dimension " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
  }
  MHAParams p;
  p.query = make_linear(dim, dim, rng);
  p.key = make_linear(dim, dim, rng);
  p.value = make_linear(dim, dim, rng);
  p.output = make_linear(dim, dim, rng);
  p.heads = heads;
  return p;
}

inline VIBParams make_vib(std::size_t dim, Rng& rng) {
  VIBParams p;
  p.mu_head = make_linear(dim, dim, rng);
  p.sigma_head = make_linear(dim, dim, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Forward

inline Tensor linear(const LinearParams& p, const Tensor& x) {
  if (x.dim(-1) != p.in_dim()) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " vs weight " + to_string(p.weight.shape()));
  }
  return add(matmul(x, p.weight), p.bias);
}

/// Width-3, stride-1, zero-padded temporal convolution D_m -> D, then the
/// sequence axis is truncated or zero-padded (at the end) to `target_len`.
///
/// For batched input padded to a common length, `lengths` gives each
/// sample's true length; rows at or past it are treated as absent, which
/// makes the result identical to convolving each sample on its own.
inline Tensor conv1d_standardize(const Tensor& x, const Conv1DParams& p, std::size_t target_len,
                                 std::span<const std::size_t> lengths = {}) {
  if (x.ndim() < 2 || x.dim(-1) != p.in_dim()) {
    throw DimensionError("conv1d_standardize: input " + to_string(x.shape()) + " vs kernel " + to_string(p.kernel.shape()));
  }
  Tensor y = matmul(shift_time(x, 1), index_first(p.kernel, 0));
  y = add(y, matmul(x, index_first(p.kernel, 1)));
  y = add(y, matmul(shift_time(x, -1), index_first(p.kernel, 2)));
  y = add(y, p.bias);
  const std::size_t L = x.dim(-2);
  bool ragged = false;
  for (std::size_t len : lengths) ragged = ragged || len < L;
  if (ragged) {
    const std::size_t D = y.dim(-1);
    const std::size_t B = y.numel() / (L * D);
    if (lengths.size() != B) throw DimensionError("conv1d_standardize: " + std::to_string(lengths.size()) + " lengths for batch of " + std::to_string(B));
    std::vector<double> mask(y.numel(), 0.0);
    for (std::size_t b = 0; b < B; ++b)
      std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(b * L * D), std::min(lengths[b], L) * D, 1.0);
    y = mul(y, Tensor(y.shape(), std::move(mask)));
  }
  return resize_time(y, target_len);
}

/// Scaled dot-product attention with `heads` heads; keys and values are
/// both projected from `key_value`.
inline Tensor mha(const MHAParams& p, const Tensor& query, const Tensor& key_value) {
  const std::size_t D = p.dim();
  if (query.dim(-1) != D || key_value.dim(-1) != D || query.ndim() != key_value.ndim()) {
    throw DimensionError("mha: query " + to_string(query.shape()) + " / key_value " + to_string(key_value.shape()) +
                         " vs model dim " + std::to_string(D));
  }
  const Tensor q = linear(p.query, query);
  const Tensor k = linear(p.key, key_value);
  const Tensor v = linear(p.value, key_value);
  const std::size_t hd = p.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Tensor qh = slice_lastdim(q, h * hd, hd);
    const Tensor kh = slice_lastdim(k, h * hd, hd);
    const Tensor vh = slice_lastdim(v, h * hd, hd);
    const Tensor scores = scale(matmul(qh, transpose_last2(kh)), inv_sqrt);
    heads.push_back(matmul(softmax_lastdim(scores), vh));
  }
  return linear(p.output, heads.size() == 1 ? heads.front() : concat_lastdim(heads));
}

/// Gaussian bottleneck: mu and sigma from affine heads, a reparameterized
/// sample mu + eps * sigma, and the closed-form KL to N(0, I), summed over
/// features and averaged over every leading (time, batch) position.
inline VIBOutput vib_forward(const VIBParams& p, const Tensor& x, const Tensor& eps,
                             SigmaMode sigma_mode = SigmaMode::Softplus) {
  VIBOutput out;
  out.mu = linear(p.mu_head, x);
  const Tensor pre = linear(p.sigma_head, x);
  out.sigma = sigma_mode == SigmaMode::Softplus ? add_scalar(softplus(pre), 1e-6) : exp(scale(pre, 0.5));
  if (eps.shape() != out.mu.shape()) {
    throw DimensionError("vib_forward: eps " + to_string(eps.shape()) + " vs mu " + to_string(out.mu.shape()));
  }
  out.sample = add(out.mu, mul(eps, out.sigma));
  const Tensor terms = sub(add(square(out.mu), square(out.sigma)), scale(log(out.sigma), 2.0));
  const double positions = static_cast<double>(out.mu.numel() / out.mu.dim(-1));
  out.kl = scale(add_scalar(sum(terms), -static_cast<double>(out.mu.numel())), 0.5 / positions);
  return out;
}

/// x + (x W + b), no nonlinearity.
inline Tensor residual_fc(const LinearParams& p, const Tensor& x) { return add(x, linear(p, x)); }

/// Mean over the sequence axis, then affine map to C outputs.
inline Tensor predict_head(const LinearParams& p, const Tensor& x) { return linear(p, mean_over_time(x)); }

/// Inverted dropout with a frozen keep mask (Bernoulli(1 - rate) entries).
inline Tensor dropout(const Tensor& x, double rate, Mode mode, const Tensor& keep_mask) {
  if (!(rate >= 0.0 && rate < 1.0)) throw DomainError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::Eval || rate == 0.0) return x;
  return scale(mul(x, keep_mask), 1.0 / (1.0 - rate));
}

inline Tensor dropout(const Tensor& x, double rate, NoiseSource& noise) {
  if (noise.mode() == Mode::Eval || rate == 0.0) return dropout(x, rate, Mode::Eval, Tensor());
  return dropout(x, rate, Mode::Train, noise.keep_mask(x.shape(), rate));
}

}  // namespace tmdc
