// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference sweep over every layer and over both stage losses at a
// small fixed size. Stochastic draws are frozen by re-creating the noise
// source from a constant seed for every evaluation.

#pragma once

#include <string>
#include <vector>

#include "tmdc/data.hpp"
#include "tmdc/gradcheck.hpp"
#include "tmdc/layers.hpp"
#include "tmdc/model.hpp"

namespace tmdc {

struct GradCheckEntry {
  std::string name;
  GradCheckResult result;
};

struct GradSuiteSize {
  std::size_t batch = 2;
  std::size_t seq_len = 3;
  std::size_t dim = 8;
  std::size_t heads = 4;
};

namespace diag_detail {

inline Tensor random_tensor(const Shape& s, Rng& rng, bool rg = true, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(numel(s));
  for (double& x : v) x = n(rng);
  return Tensor(s, std::move(v), rg);
}

inline std::vector<Tensor> leaves_of(const LinearParams& p) { return {p.weight, p.bias}; }

inline void append(std::vector<Tensor>& dst, const std::vector<Tensor>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

/// Weighted sum with fixed random coefficients so every output coordinate
/// contributes a distinct gradient.
inline Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng, false)));
}

/// A batch with ragged lengths, complete availability.
inline Batch synthetic_batch(const std::array<std::size_t, kNumModalities>& dims, const GradSuiteSize& sz, Rng& rng,
                             bool classification) {
  Dataset d;
  d.task = classification ? TaskKind::Classification : TaskKind::Regression;
  d.num_classes = classification ? 2 : 1;
  for (std::size_t b = 0; b < sz.batch; ++b) {
    ModalityBundle s;
    s.id = "g" + std::to_string(b);
    for (Modality m : kModalities) {
      const std::size_t L = sz.seq_len + (b + index_of(m)) % 2;
      s.features[index_of(m)] = random_tensor({L, dims[index_of(m)]}, rng, false);
    }
    s.label = classification ? static_cast<double>(b % 2) : 0.5 - static_cast<double>(b);
    d.samples.push_back(std::move(s));
  }
  std::vector<std::size_t> idx(sz.batch);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_batch(d, idx);
}

}  // namespace diag_detail

/// Runs the sweep. Entries are named after the layer or loss they check.
inline std::vector<GradCheckEntry> gradcheck_suite(const GradSuiteSize& sz = {}, std::uint64_t seed = 17,
                                                   double h = 1e-5) {
  using namespace diag_detail;
  std::vector<GradCheckEntry> out;
  Rng rng(seed);
  const std::size_t B = sz.batch, T = sz.seq_len, D = sz.dim;
  auto run = [&](const std::string& name, const std::function<Tensor()>& fn, const std::vector<Tensor>& leaves) {
    out.push_back({name, finite_diff_check(fn, leaves, h)});
  };

  {
    LinearParams p = make_linear(D, D, rng);
    Tensor x = random_tensor({B, T, D}, rng);
    std::vector<Tensor> leaves = leaves_of(p);
    leaves.push_back(x);
    run("linear", [&] { return probe(linear(p, x), 1); }, leaves);
  }
  {
    const std::size_t in = 5;
    Conv1DParams p = make_conv1d(in, D, rng);
    Tensor x = random_tensor({B, T + 1, in}, rng);
    const std::vector<std::size_t> lengths{T + 1, T - 1};
    run("conv1d_standardize", [&] { return probe(conv1d_standardize(x, p, T, lengths), 2); }, {p.kernel, p.bias, x});
  }
  {
    MHAParams p = make_mha(D, sz.heads, rng);
    Tensor q = random_tensor({B, T, D}, rng);
    Tensor kv = random_tensor({B, T + 1, D}, rng);
    std::vector<Tensor> leaves{q, kv};
    for (const auto* l : {&p.query, &p.key, &p.value, &p.output}) append(leaves, leaves_of(*l));
    run("mha", [&] { return probe(mha(p, q, kv), 3); }, leaves);
  }
  for (SigmaMode mode : {SigmaMode::Softplus, SigmaMode::ExpHalfLogVar}) {
    VIBParams p = make_vib(D, rng);
    Tensor x = random_tensor({B, T, D}, rng);
    std::vector<Tensor> leaves = leaves_of(p.mu_head);
    append(leaves, leaves_of(p.sigma_head));
    leaves.push_back(x);
    const std::string name = mode == SigmaMode::Softplus ? "vib(softplus)" : "vib(exp-half-logvar)";
    run(name, [&, mode] {
      NoiseSource noise(seed + 4);
      const VIBOutput o = vib_forward(p, x, noise.gaussian({B, T, D}), mode);
      return add(probe(o.sample, 4), o.kl);
    }, leaves);
  }
  {
    LinearParams p = make_linear(D, D, rng);
    Tensor x = random_tensor({B, T, D}, rng);
    run("residual_fc", [&] { return probe(residual_fc(p, x), 5); }, {p.weight, p.bias, x});
  }
  {
    LinearParams p = make_linear(D, 3, rng);
    Tensor x = random_tensor({B, T, D}, rng);
    run("predict_head+cross_entropy", [&] { return cross_entropy(predict_head(p, x), {0, 2}); }, {p.weight, p.bias, x});
  }
  {
    LinearParams p = make_linear(D, 1, rng);
    Tensor x = random_tensor({B, T, D}, rng);
    run("predict_head+mse", [&] { return mse_loss(predict_head(p, x), {0.3, -1.2}); }, {p.weight, p.bias, x});
  }
  {
    Tensor x = random_tensor({B, T, D}, rng);
    run("softmax_lastdim", [&] { return probe(softmax_lastdim(x), 6); }, {x});
  }
  {
    Tensor x = random_tensor({B, T, D}, rng);
    run("dropout(frozen mask)", [&] {
      NoiseSource noise(seed + 7);
      return probe(dropout(x, 0.5, noise), 7);
    }, {x});
  }

  const std::array<std::size_t, kNumModalities> feat{4, 6, 5};
  ModelDims dims;
  dims.feat_dims = feat;
  dims.dim = D;
  dims.seq_len = T;
  dims.heads = sz.heads;
  for (bool classification : {true, false}) {
    dims.outputs = classification ? 2 : 1;
    const TMDCParams p = TMDCParams::init(dims, seed + 11);
    const TaskKind task = classification ? TaskKind::Classification : TaskKind::Regression;
    const Batch full = synthetic_batch(feat, sz, rng, classification);
    std::vector<Tensor> leaves;
    for (const auto& np : p.named_parameters()) leaves.push_back(np.tensor);
    const ModelOptions opts{SigmaMode::Softplus, CrossOwner::KeyValue, 0.3};
    const std::string suffix = classification ? "(classification)" : "(regression)";
    run("imd_loss" + suffix, [&] {
      NoiseSource noise(seed + 12);
      return imd_loss(p, full, task, 0.01, noise, opts).total;
    }, leaves);
    if (!classification) continue;
    for (ModalitySet pattern : all_patterns()) {
      Batch b = full;
      b.available = pattern;
      run("imc_loss[" + pattern.to_string() + "]", [&] {
        NoiseSource noise(seed + 13);
        return imc_loss(p, b, task, noise, opts);
      }, leaves);
    }
  }
  return out;
}

}  // namespace tmdc
