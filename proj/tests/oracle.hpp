// SPDX-License-Identifier: Apache-2.0
//
// Straight-line reference implementations for the tests. Everything here
// works on plain row-major matrices with explicit loops and never calls the
// library's differentiable ops, so agreement is evidence rather than a
// tautology. Only parameter values and noise draws are taken from the
// library.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "tmdc/tmdc.hpp"

namespace oracle {

struct Mat {
  std::size_t r = 0, c = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0) : r(rows), c(cols), v(rows * cols, fill) {}
  double& at(std::size_t i, std::size_t j) { return v[i * c + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * c + j]; }
};

/// Row block `b` of a [B, R, C] tensor, or the whole [R, C] tensor.
inline Mat from_tensor(const tmdc::Tensor& t, std::size_t b = 0) {
  const std::size_t C = t.dim(-1);
  const std::size_t R = t.ndim() >= 2 ? t.dim(-2) : 1;
  Mat m(R, C);
  for (std::size_t i = 0; i < R * C; ++i) m.v[i] = t[b * R * C + i];
  return m;
}

inline Mat weight(const tmdc::LinearParams& p) { return from_tensor(p.weight); }
inline std::vector<double> bias(const tmdc::LinearParams& p) { return {p.bias.data().begin(), p.bias.data().end()}; }

inline Mat affine(const Mat& x, const Mat& w, const std::vector<double>& b) {
  Mat y(x.r, w.c);
  for (std::size_t i = 0; i < x.r; ++i)
    for (std::size_t j = 0; j < w.c; ++j) {
      double s = b.empty() ? 0.0 : b[j];
      for (std::size_t k = 0; k < x.c; ++k) s += x.at(i, k) * w.at(k, j);
      y.at(i, j) = s;
    }
  return y;
}

inline Mat affine(const Mat& x, const tmdc::LinearParams& p) { return affine(x, weight(p), bias(p)); }

inline Mat plus(const Mat& a, const Mat& b) {
  Mat y = a;
  for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += b.v[i];
  return y;
}

inline Mat hadamard(const Mat& a, const Mat& b) {
  Mat y = a;
  for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] *= b.v[i];
  return y;
}

inline Mat times(const Mat& a, double s) {
  Mat y = a;
  for (double& x : y.v) x *= s;
  return y;
}

inline Mat hconcat(const std::vector<Mat>& parts) {
  std::size_t C = 0;
  for (const auto& p : parts) C += p.c;
  Mat y(parts.front().r, C);
  for (std::size_t i = 0; i < y.r; ++i) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      for (std::size_t j = 0; j < p.c; ++j) y.at(i, off + j) = p.at(i, j);
      off += p.c;
    }
  }
  return y;
}

inline Mat pad_cols(const Mat& x, std::size_t C) {
  Mat y(x.r, C);
  for (std::size_t i = 0; i < x.r; ++i)
    for (std::size_t j = 0; j < x.c; ++j) y.at(i, j) = x.at(i, j);
  return y;
}

inline double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }

inline std::vector<double> softmax(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> e(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (e[i] = std::exp(z[i] - mx));
  for (double& v : e) v /= s;
  return e;
}

/// Width-3 zero-padded convolution over all L rows, then truncation or
/// zero rows up to T.
inline Mat conv_standardize(const Mat& x, const tmdc::Conv1DParams& p, std::size_t T) {
  const std::size_t in = p.kernel.dim(1), out = p.kernel.dim(2);
  auto K = [&](std::size_t tap, std::size_t i, std::size_t o) { return p.kernel[(tap * in + i) * out + o]; };
  Mat y(T, out);
  for (std::size_t t = 0; t < std::min(T, x.r); ++t)
    for (std::size_t o = 0; o < out; ++o) {
      double s = p.bias[o];
      for (int tap = 0; tap < 3; ++tap) {
        const long src = static_cast<long>(t) + tap - 1;
        if (src < 0 || src >= static_cast<long>(x.r)) continue;
        for (std::size_t i = 0; i < in; ++i) s += x.at(static_cast<std::size_t>(src), i) * K(tap, i, o);
      }
      y.at(t, o) = s;
    }
  return y;
}

inline Mat attention(const tmdc::MHAParams& p, const Mat& query, const Mat& kv) {
  const Mat Q = affine(query, p.query), K = affine(kv, p.key), V = affine(kv, p.value);
  const std::size_t D = Q.c, hd = D / p.heads;
  Mat heads(query.r, D);
  for (std::size_t h = 0; h < p.heads; ++h)
    for (std::size_t i = 0; i < query.r; ++i) {
      std::vector<double> scores(kv.r);
      for (std::size_t j = 0; j < kv.r; ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < hd; ++d) s += Q.at(i, h * hd + d) * K.at(j, h * hd + d);
        scores[j] = s / std::sqrt(static_cast<double>(hd));
      }
      const auto w = softmax(scores);
      for (std::size_t d = 0; d < hd; ++d) {
        double s = 0.0;
        for (std::size_t j = 0; j < kv.r; ++j) s += w[j] * V.at(j, h * hd + d);
        heads.at(i, h * hd + d) = s;
      }
    }
  return affine(heads, p.output);
}

struct Bottleneck {
  Mat mu, sigma, sample;
  double kl = 0.0;  // per position mean
};

inline Bottleneck vib(const tmdc::VIBParams& p, const Mat& x, const Mat& eps) {
  Bottleneck o;
  o.mu = affine(x, p.mu_head);
  o.sigma = affine(x, p.sigma_head);
  for (double& s : o.sigma.v) s = softplus(s) + 1e-6;
  o.sample = plus(o.mu, hadamard(eps, o.sigma));
  double kl = 0.0;
  for (std::size_t i = 0; i < o.mu.v.size(); ++i) {
    const double m = o.mu.v[i], s = o.sigma.v[i];
    kl += 0.5 * (m * m + s * s - 2.0 * std::log(s) - 1.0);
  }
  o.kl = kl / static_cast<double>(x.r);
  return o;
}

inline Mat residual(const Mat& x, const tmdc::LinearParams& p) { return plus(x, affine(x, p)); }

inline std::vector<double> head(const Mat& x, const tmdc::LinearParams& p) {
  Mat pooled(1, x.c);
  for (std::size_t i = 0; i < x.r; ++i)
    for (std::size_t j = 0; j < x.c; ++j) pooled.at(0, j) += x.at(i, j) / static_cast<double>(x.r);
  return affine(pooled, p).v;
}

inline Mat inverted_dropout(const Mat& x, const Mat& keep, double rate) {
  if (rate == 0.0) return x;
  return times(hadamard(x, keep), 1.0 / (1.0 - rate));
}

inline double cross_entropy(const std::vector<double>& logits, std::size_t label) {
  return -std::log(softmax(logits)[label]);
}

/// One branch on a single sample. eps and keep are the frozen draws.
struct Branch {
  Mat standardized;
  Bottleneck b;
  Mat attended, refined;
  std::vector<double> y_vib, y_att;
};

inline Branch branch(const tmdc::Conv1DParams& conv, const tmdc::VIBParams& vp, const tmdc::MHAParams& att,
                     const tmdc::LinearParams& resfc, const tmdc::LinearParams& h_vib, const tmdc::LinearParams& h_att,
                     const Mat& x, std::size_t T, const Mat& eps, const Mat& keep, double rate) {
  Branch o;
  o.standardized = conv_standardize(x, conv, T);
  o.b = vib(vp, o.standardized, eps);
  o.attended = plus(attention(att, o.b.sample, o.b.sample), o.b.sample);
  o.refined = inverted_dropout(residual(o.attended, resfc), keep, rate);
  o.y_vib = head(o.b.sample, h_vib);
  o.y_att = head(o.refined, h_att);
  return o;
}

/// Replays the library's noise stream: one Gaussian block per bottleneck and
/// one keep mask per dropout site, in forward order.
struct Draws {
  tmdc::NoiseSource src;
  explicit Draws(std::uint64_t seed) : src(seed) {}
  Mat gaussian(std::size_t T, std::size_t D) { return from_tensor(src.gaussian({1, T, D})); }
  Mat keep(std::size_t T, std::size_t D, double rate) {
    if (rate == 0.0) return Mat(T, D, 1.0);
    return from_tensor(src.keep_mask({1, T, D}, rate));
  }
};

}  // namespace oracle
