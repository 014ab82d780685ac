// SPDX-License-Identifier: Apache-2.0
//
// Multimodal samples, synthetic latent-factor generator, missing-pattern
// masking, Gaussian corruption, normalization and batching.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tmdc/modality.hpp"
#include "tmdc/rng.hpp"
#include "tmdc/tensor.hpp"

namespace tmdc {

/// One sample: per-modality feature sequences [L_m, D_m], availability and label.
/// For classification the label holds the class index.
struct ModalityBundle {
  std::string id;
  std::array<Tensor, kNumModalities> features;
  ModalitySet available = ModalitySet::all();
  double label = 0.0;

  const Tensor& feature(Modality m) const { return features[index_of(m)]; }
};

struct Dataset {
  TaskKind task = TaskKind::Classification;
  std::size_t num_classes = 2;  // 1 for regression
  std::string split;
  std::vector<ModalityBundle> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  std::array<std::size_t, kNumModalities> feat_dims() const {
    std::array<std::size_t, kNumModalities> d{};
    if (!samples.empty())
      for (Modality m : kModalities) d[index_of(m)] = samples.front().feature(m).dim(-1);
    return d;
  }

  std::size_t max_len() const {
    std::size_t L = 1;
    for (const auto& s : samples)
      for (const auto& f : s.features) L = std::max(L, f.dim(0));
    return L;
  }

  void validate() const {
    const auto dims = feat_dims();
    for (const auto& s : samples) {
      for (Modality m : kModalities) {
        const Tensor& f = s.feature(m);
        if (!f.defined() || f.ndim() != 2 || f.dim(-1) != dims[index_of(m)]) {
          throw ProtocolError("sample " + s.id + ": modality " + std::string(1, letter(m)) +
                              " features must be [L, " + std::to_string(dims[index_of(m)]) + "]");
        }
      }
      if (!std::isfinite(s.label)) throw ProtocolError("sample " + s.id + ": non-finite label");
      if (task == TaskKind::Classification &&
          (s.label < 0 || s.label >= static_cast<double>(num_classes) || s.label != std::floor(s.label))) {
        throw ProtocolError("sample " + s.id + ": class label " + std::to_string(s.label) + " out of range");
      }
    }
  }
};

struct SplitDataset {
  Dataset train, val, test;
};

// ---------------------------------------------------------------------------
// Synthetic data

enum class SynthTask { Binary, Quadrant, Regression };

struct SynthSpec {
  std::size_t n_samples = 2000;
  std::size_t shared_dim = 8;
  std::array<std::size_t, kNumModalities> private_dims{4, 4, 4};
  std::array<std::size_t, kNumModalities> seq_lens{32, 32, 32};
  std::array<std::size_t, kNumModalities> feat_dims{12, 32, 32};
  SynthTask task = SynthTask::Binary;
  std::uint64_t seed = 0;
  double private_scale = 0.25;
  double noise_std = 0.1;
  double train_fraction = 0.7;
  double val_fraction = 0.1;
  /// Label direction w; drawn at random (unit norm) when empty.
  std::vector<double> label_weights;

  void validate() const {
    auto positive = [](std::size_t v, const char* what) {
      if (v == 0) throw ConfigError(std::string(what) + ": must be >= 1");
    };
    positive(n_samples, "samples");
    positive(shared_dim, "shared-dim");
    for (Modality m : kModalities) {
      positive(private_dims[index_of(m)], "private dims");
      positive(seq_lens[index_of(m)], "sequence lengths");
      positive(feat_dims[index_of(m)], "feature dims");
    }
    if (task == SynthTask::Quadrant && shared_dim < 2) throw ConfigError("shared-dim: quadrant labels need >= 2");
    if (!label_weights.empty() && label_weights.size() != shared_dim)
      throw ConfigError("label weights: need " + std::to_string(shared_dim) + " entries");
    if (!(train_fraction > 0 && val_fraction >= 0 && train_fraction + val_fraction < 1))
      throw ConfigError("split fractions: need train > 0, val >= 0, train + val < 1");
  }
};

/// Latent coordinate i is visible to modality m unless i % 3 == m; any two
/// modalities together see every coordinate, a single one sees a subset.
inline bool latent_visible(Modality m, std::size_t i) { return i % kNumModalities != index_of(m); }

/// Draws z ~ N(0, I_k) per sample and per-step private u_m ~ N(0, I); each
/// row of modality m is A_m z + B_m u_m + noise with per-seed mixing maps.
/// Samples are split train / val / test in generation order.
inline SplitDataset gen_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(derive_seed({spec.seed, 0x5347}));
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t k = spec.shared_dim;

  std::array<std::vector<double>, kNumModalities> mix_shared, mix_private;
  for (Modality m : kModalities) {
    const std::size_t i = index_of(m);
    const std::size_t D = spec.feat_dims[i];
    const std::size_t p = spec.private_dims[i];
    std::size_t visible = 0;
    for (std::size_t c = 0; c < k; ++c) visible += latent_visible(m, c);
    const double a_scale = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(visible, 1)));
    mix_shared[i].resize(D * k);
    for (std::size_t r = 0; r < D; ++r)
      for (std::size_t c = 0; c < k; ++c) {
        const double v = normal(rng) * a_scale;
        mix_shared[i][r * k + c] = latent_visible(m, c) ? v : 0.0;
      }
    mix_private[i].resize(D * p);
    for (double& v : mix_private[i]) v = normal(rng) * spec.private_scale / std::sqrt(static_cast<double>(p));
  }

  std::vector<double> w = spec.label_weights;
  if (w.empty()) {
    w.resize(k);
    double norm = 0.0;
    for (double& v : w) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : w) v /= norm;
  }

  const TaskKind task = spec.task == SynthTask::Regression ? TaskKind::Regression : TaskKind::Classification;
  const std::size_t classes = spec.task == SynthTask::Binary ? 2 : spec.task == SynthTask::Quadrant ? 4 : 1;
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(spec.n_samples)));
  const auto n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(spec.n_samples)));

  SplitDataset out;
  out.train = {task, classes, "train", {}};
  out.val = {task, classes, "val", {}};
  out.test = {task, classes, "test", {}};

  std::vector<double> z(k);
  for (std::size_t s = 0; s < spec.n_samples; ++s) {
    for (double& v : z) v = normal(rng);
    ModalityBundle b;
    char id[16];
    std::snprintf(id, sizeof id, "s%05zu", s);
    b.id = id;
    for (Modality m : kModalities) {
      const std::size_t i = index_of(m);
      const std::size_t L = spec.seq_lens[i];
      const std::size_t D = spec.feat_dims[i];
      const std::size_t p = spec.private_dims[i];
      std::vector<double> x(L * D);
      std::vector<double> u(p);
      for (std::size_t t = 0; t < L; ++t) {
        for (double& v : u) v = normal(rng);
        for (std::size_t r = 0; r < D; ++r) {
          double acc = 0.0;
          for (std::size_t c = 0; c < k; ++c) acc += mix_shared[i][r * k + c] * z[c];
          for (std::size_t c = 0; c < p; ++c) acc += mix_private[i][r * p + c] * u[c];
          x[t * D + r] = acc + spec.noise_std * normal(rng);
        }
      }
      b.features[i] = Tensor({L, D}, std::move(x));
    }
    const double score = std::inner_product(w.begin(), w.end(), z.begin(), 0.0);
    switch (spec.task) {
      case SynthTask::Binary: b.label = score > 0 ? 1.0 : 0.0; break;
      case SynthTask::Quadrant: b.label = (z[0] > 0 ? 1.0 : 0.0) + (z[1] > 0 ? 2.0 : 0.0); break;
      case SynthTask::Regression: b.label = score; break;
    }
    Dataset& dst = s < n_train ? out.train : s < n_train + n_val ? out.val : out.test;
    dst.samples.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corruption

/// Zeroes and flags unavailable every modality outside `pattern`.
inline ModalityBundle apply_missing(ModalityBundle bundle, ModalitySet pattern) {
  if (pattern.empty()) throw ProtocolError("apply_missing: empty pattern");
  for (Modality m : kModalities) {
    if (pattern.contains(m)) continue;
    Tensor& f = bundle.features[index_of(m)];
    f = Tensor::zeros(f.shape());
  }
  bundle.available = bundle.available.intersect(pattern);
  return bundle;
}

/// Adds i.i.d. N(0, sigma^2) to every element of the available modalities.
/// Each modality draws from its own stream, so the corruption of one modality
/// does not depend on which others are present.
inline ModalityBundle add_gaussian_noise(ModalityBundle bundle, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ConfigError("noise-sigma: must be non-negative, got " + std::to_string(sigma));
  if (sigma == 0.0) return bundle;
  for (Modality m : kModalities) {
    if (!bundle.available.contains(m)) continue;
    Rng rng(derive_seed({seed, index_of(m)}));
    std::normal_distribution<double> normal(0.0, sigma);
    Tensor& f = bundle.features[index_of(m)];
    std::vector<double> v(f.data().begin(), f.data().end());
    for (double& x : v) x += normal(rng);
    f = Tensor(f.shape(), std::move(v));
  }
  return bundle;
}

inline Dataset with_missing(Dataset d, ModalitySet pattern) {
  for (auto& s : d.samples) s = apply_missing(std::move(s), pattern);
  return d;
}

/// Corrupts each sample with a stream derived from (seed, sample index).
inline Dataset with_noise(Dataset d, double sigma, std::uint64_t seed) {
  for (std::size_t i = 0; i < d.samples.size(); ++i)
    d.samples[i] = add_gaussian_noise(std::move(d.samples[i]), sigma, derive_seed({seed, i}));
  return d;
}

/// Per-modality, per-feature mean and standard deviation over all rows.
struct FeatureStats {
  std::array<std::vector<double>, kNumModalities> mean, stddev;
};

inline FeatureStats compute_stats(const Dataset& d) {
  FeatureStats st;
  const auto dims = d.feat_dims();
  for (Modality m : kModalities) {
    const std::size_t i = index_of(m);
    const std::size_t D = dims[i];
    std::vector<double> s(D, 0.0), s2(D, 0.0);
    double rows = 0.0;
    for (const auto& b : d.samples) {
      const Tensor& f = b.features[i];
      const std::size_t L = f.dim(0);
      for (std::size_t t = 0; t < L; ++t)
        for (std::size_t j = 0; j < D; ++j) {
          const double v = f[t * D + j];
          s[j] += v;
          s2[j] += v * v;
        }
      rows += static_cast<double>(L);
    }
    st.mean[i].resize(D);
    st.stddev[i].resize(D);
    for (std::size_t j = 0; j < D; ++j) {
      const double mu = rows > 0 ? s[j] / rows : 0.0;
      const double var = rows > 0 ? std::max(0.0, s2[j] / rows - mu * mu) : 0.0;
      st.mean[i][j] = mu;
      st.stddev[i][j] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
  }
  return st;
}

/// z-scores every feature column of the available modalities.
inline Dataset normalize(Dataset d, const FeatureStats& st) {
  for (auto& b : d.samples) {
    for (Modality m : kModalities) {
      if (!b.available.contains(m)) continue;
      const std::size_t i = index_of(m);
      Tensor& f = b.features[i];
      const std::size_t D = f.dim(-1);
      std::vector<double> v(f.data().begin(), f.data().end());
      for (std::size_t j = 0; j < v.size(); ++j) v[j] = (v[j] - st.mean[i][j % D]) / st.stddev[i][j % D];
      f = Tensor(f.shape(), std::move(v));
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Batching

/// Index batches in a permutation fixed by (seed, epoch); the final partial
/// batch is kept.
inline std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t shuffle_seed,
                                                        std::uint64_t epoch) {
  if (n == 0) throw ProtocolError("batch_iter: empty dataset");
  if (batch_size == 0) throw ConfigError("batch-size: must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed({shuffle_seed, 0xBA7C, epoch}));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return batches;
}

/// Samples stacked per modality into [B, L_max, D_m], with true lengths.
struct Batch {
  std::array<Tensor, kNumModalities> inputs;
  std::array<std::vector<std::size_t>, kNumModalities> lengths;
  ModalitySet available;
  std::vector<double> labels;

  std::size_t size() const { return labels.size(); }
  const Tensor& input(Modality m) const { return inputs[index_of(m)]; }
  std::span<const std::size_t> length(Modality m) const { return lengths[index_of(m)]; }

  std::vector<std::size_t> class_labels() const {
    std::vector<std::size_t> c(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) c[i] = static_cast<std::size_t>(labels[i]);
    return c;
  }
};

/// All samples of a batch must share one availability pattern.
inline Batch make_batch(const Dataset& d, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ProtocolError("make_batch: no samples");
  Batch b;
  b.available = d.samples[indices.front()].available;
  for (std::size_t idx : indices) {
    if (!(d.samples[idx].available == b.available)) {
      throw ProtocolError("make_batch: mixed availability patterns in one batch (" + b.available.to_string() + " vs " +
                          d.samples[idx].available.to_string() + ")");
    }
    b.labels.push_back(d.samples[idx].label);
  }
  const std::size_t B = indices.size();
  for (Modality m : kModalities) {
    const std::size_t i = index_of(m);
    std::size_t Lmax = 1;
    for (std::size_t idx : indices) Lmax = std::max(Lmax, d.samples[idx].features[i].dim(0));
    const std::size_t D = d.samples[indices.front()].features[i].dim(1);
    std::vector<double> x(B * Lmax * D, 0.0);
    for (std::size_t r = 0; r < B; ++r) {
      const Tensor& f = d.samples[indices[r]].features[i];
      std::copy(f.data().begin(), f.data().end(), x.begin() + static_cast<std::ptrdiff_t>(r * Lmax * D));
      b.lengths[i].push_back(f.dim(0));
    }
    b.inputs[i] = Tensor({B, Lmax, D}, std::move(x));
  }
  return b;
}

inline Batch make_batch(const ModalityBundle& single) {
  Dataset d;
  d.samples.push_back(single);
  const std::size_t idx = 0;
  return make_batch(d, std::span<const std::size_t>(&idx, 1));
}

}  // namespace tmdc
