// SPDX-License-Identifier: Apache-2.0
//
// Two-stage denoising and complementation model.
//
// Stage one (intra-modality denoising) runs, for every modality, a
// modality-specific branch with its own weights and a modality-common branch
// whose convolution, bottleneck, attention and residual block are one shared
// object. Stage two (inter-modality complementation) refines each available
// modality with attention from its specific onto its common representation,
// synthesizes the missing slots from cross-modal attention, and predicts from
// the concatenation.

#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "tmdc/data.hpp"
#include "tmdc/layers.hpp"
#include "tmdc/modality.hpp"

namespace tmdc {

struct ModelDims {
  std::array<std::size_t, kNumModalities> feat_dims{};
  std::size_t dim = 256;
  std::size_t seq_len = 8;
  std::size_t heads = 4;
  std::size_t outputs = 1;  // 1 for regression, class count otherwise

  std::size_t shared_in_dim() const { return *std::max_element(feat_dims.begin(), feat_dims.end()); }

  void validate() const {
    for (std::size_t d : feat_dims)
      if (d == 0) throw ConfigError("feature dims: must be >= 1");
    if (dim == 0) throw ConfigError("dim: must be >= 1");
    if (seq_len == 0) throw ConfigError("seq-len: must be >= 1");
    if (heads == 0 || dim % heads != 0) throw ConfigError("dim: must be divisible by the head count");
    if (outputs == 0) throw ConfigError("outputs: must be >= 1");
  }
};

/// Which modality's stage-one attention and refinement weights serve a
/// cross-modal pass (query from one modality, key/value from another).
enum class CrossOwner { KeyValue, Query };

struct ModelOptions {
  SigmaMode sigma_mode = SigmaMode::Softplus;
  CrossOwner cross_owner = CrossOwner::KeyValue;
  double dropout = 0.0;
};

/// Removes a stage or a denoising module; see apply_ablation notes below.
struct AblationConfig {
  bool use_imd_pretrain = true;
  bool use_imc_complement = true;
  bool use_mcd = true;
  bool use_msd = true;

  static AblationConfig full() { return {}; }

  /// Builds from removal tags: "imd", "imc", "msd", "mcd".
  static AblationConfig without(const std::vector<std::string>& tags) {
    AblationConfig c;
    for (const auto& t : tags) {
      if (t == "imd") c.use_imd_pretrain = false;
      else if (t == "imc") c.use_imc_complement = false;
      else if (t == "msd") c.use_msd = false;
      else if (t == "mcd") c.use_mcd = false;
      else throw ConfigError("ablate: unknown variant \"" + t + "\" (expected imd|imc|msd|mcd)");
    }
    c.validate();
    return c;
  }

  void validate() const {
    if (!use_mcd && !use_msd) throw ConfigError("ablate: cannot remove both msd and mcd");
  }

  std::vector<std::string> removed() const {
    std::vector<std::string> r;
    if (!use_imd_pretrain) r.push_back("imd");
    if (!use_imc_complement) r.push_back("imc");
    if (!use_msd) r.push_back("msd");
    if (!use_mcd) r.push_back("mcd");
    return r;
  }

  std::string name() const {
    const auto r = removed();
    if (r.empty()) return "full";
    std::string s = "w/o";
    for (const auto& t : r) s += " " + t;
    return s;
  }

  friend bool operator==(const AblationConfig&, const AblationConfig&) = default;
};

struct SpecificBranchParams {
  Conv1DParams conv;
  VIBParams vib;
  MHAParams mha;
  LinearParams resfc;
  LinearParams head_s;    // from the bottleneck sample
  LinearParams head_spe;  // from the refined representation
};

struct SharedCommonParams {
  Conv1DParams conv;  // input width = widest modality; narrower inputs are zero-padded
  VIBParams vib;
  MHAParams mha;
  LinearParams resfc;
};

struct CommonHeadParams {
  LinearParams head_c;
  LinearParams head_com;
};

struct NamedParam {
  std::string name;
  std::string group;
  Tensor tensor;
};

struct TMDCParams {
  ModelDims dims;
  std::array<SpecificBranchParams, kNumModalities> spe;
  SharedCommonParams com;  // one copy serves every modality
  std::array<CommonHeadParams, kNumModalities> com_heads;
  std::array<LinearParams, kNumModalities> all_resfc;  // stage-two refinement, per modality
  LinearParams fuse_head;                              // [3D -> outputs]

  static TMDCParams init(const ModelDims& dims, std::uint64_t seed) {
    dims.validate();
    Rng rng(derive_seed({seed, 0x1417}));
    TMDCParams p;
    p.dims = dims;
    const std::size_t D = dims.dim;
    const std::size_t C = dims.outputs;
    for (Modality m : kModalities) {
      auto& s = p.spe[index_of(m)];
      s.conv = make_conv1d(dims.feat_dims[index_of(m)], D, rng);
      s.vib = make_vib(D, rng);
      s.mha = make_mha(D, dims.heads, rng);
      s.resfc = make_linear(D, D, rng);
      s.head_s = make_linear(D, C, rng);
      s.head_spe = make_linear(D, C, rng);
    }
    p.com.conv = make_conv1d(dims.shared_in_dim(), D, rng);
    p.com.vib = make_vib(D, rng);
    p.com.mha = make_mha(D, dims.heads, rng);
    p.com.resfc = make_linear(D, D, rng);
    for (Modality m : kModalities) {
      auto& h = p.com_heads[index_of(m)];
      h.head_c = make_linear(D, C, rng);
      h.head_com = make_linear(D, C, rng);
    }
    for (auto& r : p.all_resfc) r = make_linear(D, D, rng);
    p.fuse_head = make_linear(kNumModalities * D, C, rng);
    return p;
  }

  /// Visits every parameter slot with its stable name and group. Groups:
  /// "msd.<m>" (specific branch), "mcd.shared", "mcd.<m>" (common heads),
  /// "imc.<m>" (stage-two refinement), "fusion".
  void for_each(const std::function<void(const std::string&, const std::string&, Tensor&)>& fn) {
    auto lin = [&](const std::string& name, const std::string& group, LinearParams& l) {
      fn(name + ".weight", group, l.weight);
      fn(name + ".bias", group, l.bias);
    };
    auto conv = [&](const std::string& name, const std::string& group, Conv1DParams& c) {
      fn(name + ".kernel", group, c.kernel);
      fn(name + ".bias", group, c.bias);
    };
    auto vib = [&](const std::string& name, const std::string& group, VIBParams& v) {
      lin(name + ".mu", group, v.mu_head);
      lin(name + ".sigma", group, v.sigma_head);
    };
    auto att = [&](const std::string& name, const std::string& group, MHAParams& a) {
      lin(name + ".q", group, a.query);
      lin(name + ".k", group, a.key);
      lin(name + ".v", group, a.value);
      lin(name + ".o", group, a.output);
    };
    for (Modality m : kModalities) {
      const std::string L(1, letter(m));
      const std::string g = "msd." + L;
      const std::string n = "spe." + L;
      auto& s = spe[index_of(m)];
      conv(n + ".conv", g, s.conv);
      vib(n + ".vib", g, s.vib);
      att(n + ".mha", g, s.mha);
      lin(n + ".resfc", g, s.resfc);
      lin(n + ".head_s", g, s.head_s);
      lin(n + ".head_spe", g, s.head_spe);
    }
    conv("com.conv", "mcd.shared", com.conv);
    vib("com.vib", "mcd.shared", com.vib);
    att("com.mha", "mcd.shared", com.mha);
    lin("com.resfc", "mcd.shared", com.resfc);
    for (Modality m : kModalities) {
      const std::string L(1, letter(m));
      lin("com." + L + ".head_c", "mcd." + L, com_heads[index_of(m)].head_c);
      lin("com." + L + ".head_com", "mcd." + L, com_heads[index_of(m)].head_com);
    }
    for (Modality m : kModalities) {
      const std::string L(1, letter(m));
      lin("all." + L + ".resfc", "imc." + L, all_resfc[index_of(m)]);
    }
    lin("fuse", "fusion", fuse_head);
  }

  std::vector<NamedParam> named_parameters() const {
    std::vector<NamedParam> out;
    const_cast<TMDCParams*>(this)->for_each(
        [&](const std::string& n, const std::string& g, Tensor& t) { out.push_back({n, g, t}); });
    return out;
  }

  /// Independent copy: same structure and values, fresh storage.
  TMDCParams clone() const {
    TMDCParams c = *this;
    c.for_each([](const std::string&, const std::string&, Tensor& t) {
      t = Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), true);
    });
    return c;
  }

  /// Copies values from `other` (identical structure) into this storage.
  void assign_values(const TMDCParams& other) {
    const auto src = other.named_parameters();
    std::size_t i = 0;
    for_each([&](const std::string&, const std::string&, Tensor& t) {
      auto dst = t.mutable_data();
      std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), dst.begin());
      ++i;
    });
  }

  void zero_grad() {
    for_each([](const std::string&, const std::string&, Tensor& t) { t.zero_grad(); });
  }
};

inline bool group_is_specific(const std::string& group) { return group.rfind("msd.", 0) == 0; }
inline bool group_is_common(const std::string& group) { return group.rfind("mcd.", 0) == 0; }

/// Whether a parameter group takes part in training under `ablation`.
/// Removing MSD drops every "msd.*" group, removing MCD every "mcd.*" group.
inline bool group_active(const std::string& group, const AblationConfig& ablation) {
  if (!ablation.use_msd && group_is_specific(group)) return false;
  if (!ablation.use_mcd && group_is_common(group)) return false;
  return true;
}

/// The optimizer's parameter list for an ablation.
inline std::vector<NamedParam> trainable_parameters(const TMDCParams& p, const AblationConfig& ablation) {
  std::vector<NamedParam> out;
  for (auto& np : p.named_parameters())
    if (group_active(np.group, ablation)) out.push_back(np);
  return out;
}

// ---------------------------------------------------------------------------
// Stage one

/// Outputs of one denoising branch (specific or common) for one modality.
struct BranchOutput {
  Tensor standardized;  // conv output [B, T, D]
  VIBOutput vib;        // vib.sample is X_s / X_c
  Tensor attended;      // mha(X, X) + X
  Tensor refined;       // residual block output (dropout applied in train mode)
  Tensor y_vib;         // prediction from the bottleneck sample
  Tensor y_att;         // prediction from the refined representation
};

namespace detail {

inline BranchOutput run_branch(const Conv1DParams& conv, const VIBParams& vib, const MHAParams& att,
                               const LinearParams& resfc, const LinearParams& head_vib, const LinearParams& head_att,
                               const Tensor& x, std::span<const std::size_t> lengths, std::size_t seq_len,
                               NoiseSource& noise, const ModelOptions& opts) {
  BranchOutput o;
  o.standardized = conv1d_standardize(x, conv, seq_len, lengths);
  o.vib = vib_forward(vib, o.standardized, noise.gaussian(o.standardized.shape()), opts.sigma_mode);
  const Tensor& xs = o.vib.sample;
  o.attended = add(mha(att, xs, xs), xs);
  o.refined = dropout(residual_fc(resfc, o.attended), opts.dropout, noise);
  o.y_vib = predict_head(head_vib, xs);
  o.y_att = predict_head(head_att, o.refined);
  return o;
}

inline const Tensor& checked_input(const Tensor& x, Modality m, std::size_t expect) {
  if (x.ndim() < 2 || x.dim(-1) != expect) {
    throw DimensionError(std::string("modality ") + letter(m) + ": input " + to_string(x.shape()) +
                         " needs feature width " + std::to_string(expect));
  }
  return x;
}

}  // namespace detail

/// Modality-specific denoising: conv -> bottleneck -> self-attention with
/// residual -> residual block -> the two prediction heads.
inline BranchOutput msd_forward(const TMDCParams& p, const Tensor& x_raw, Modality m, NoiseSource& noise,
                                const ModelOptions& opts, std::span<const std::size_t> lengths = {}) {
  const auto& s = p.spe[index_of(m)];
  detail::checked_input(x_raw, m, p.dims.feat_dims[index_of(m)]);
  return detail::run_branch(s.conv, s.vib, s.mha, s.resfc, s.head_s, s.head_spe, x_raw, lengths, p.dims.seq_len, noise,
                            opts);
}

/// Modality-common denoising: the same pipeline through the shared weights;
/// only the two prediction heads belong to the modality.
inline BranchOutput mcd_forward(const TMDCParams& p, const Tensor& x_raw, Modality m, NoiseSource& noise,
                                const ModelOptions& opts, std::span<const std::size_t> lengths = {}) {
  const auto& h = p.com_heads[index_of(m)];
  detail::checked_input(x_raw, m, p.dims.feat_dims[index_of(m)]);
  const Tensor x = pad_lastdim(x_raw, p.dims.shared_in_dim());
  return detail::run_branch(p.com.conv, p.com.vib, p.com.mha, p.com.resfc, h.head_c, h.head_com, x, lengths,
                            p.dims.seq_len, noise, opts);
}

inline Tensor task_loss(const Tensor& y, const Batch& batch, TaskKind task) {
  if (task == TaskKind::Regression) return mse_loss(y, batch.labels);
  return cross_entropy(y, batch.class_labels());
}

/// Stable names of the 18 stage-one terms, in loss-table column order.
inline const std::array<std::string, 18>& imd_term_names() {
  static const std::array<std::string, 18> names = [] {
    std::array<std::string, 18> n;
    const char* kinds[] = {"L_s", "L_c", "L_Spe", "L_Com", "KL_s", "KL_c"};
    std::size_t i = 0;
    for (const char* k : kinds)
      for (Modality m : kModalities) n[i++] = std::string(k) + "_" + letter(m);
    return n;
  }();
  return names;
}

enum ImdTerm : std::size_t { kLs = 0, kLc = 3, kLSpe = 6, kLCom = 9, kKLs = 12, kKLc = 15 };

struct ImdForward {
  std::array<BranchOutput, kNumModalities> specific;  // empty when MSD is removed
  std::array<BranchOutput, kNumModalities> common;    // empty when MCD is removed
};

struct ImdLoss {
  Tensor total;
  /// Raw (un-weighted) terms in imd_term_names() order; undefined entries
  /// belong to a removed module.
  std::array<Tensor, 18> terms;
  ImdForward forward;
};

inline ImdForward imd_forward(const TMDCParams& p, const Batch& batch, NoiseSource& noise, const ModelOptions& opts,
                              const AblationConfig& ablation = {}) {
  ImdForward f;
  for (Modality m : kModalities) {
    const std::size_t i = index_of(m);
    if (ablation.use_msd) f.specific[i] = msd_forward(p, batch.input(m), m, noise, opts, batch.length(m));
    if (ablation.use_mcd) f.common[i] = mcd_forward(p, batch.input(m), m, noise, opts, batch.length(m));
  }
  return f;
}

/// Sum over modalities of the two refined-prediction losses plus the two
/// bottleneck objectives (task loss + beta * KL), each branch on complete data.
inline ImdLoss imd_loss(const TMDCParams& p, const Batch& batch, TaskKind task, double beta, NoiseSource& noise,
                        const ModelOptions& opts, const AblationConfig& ablation = {}) {
  if (!batch.available.complete()) {
    throw ProtocolError("imd_loss: stage one trains on complete data, batch has only " + batch.available.to_string());
  }
  ImdLoss out;
  out.forward = imd_forward(p, batch, noise, opts, ablation);
  std::vector<Tensor> task_terms, kl_terms;
  for (Modality m : kModalities) {
    const std::size_t i = index_of(m);
    if (ablation.use_msd) {
      const BranchOutput& s = out.forward.specific[i];
      out.terms[kLs + i] = task_loss(s.y_vib, batch, task);
      out.terms[kLSpe + i] = task_loss(s.y_att, batch, task);
      out.terms[kKLs + i] = s.vib.kl;
    }
    if (ablation.use_mcd) {
      const BranchOutput& c = out.forward.common[i];
      out.terms[kLc + i] = task_loss(c.y_vib, batch, task);
      out.terms[kLCom + i] = task_loss(c.y_att, batch, task);
      out.terms[kKLc + i] = c.vib.kl;
    }
  }
  Tensor total;
  auto accumulate = [&](const Tensor& t) { total = total.defined() ? add(total, t) : t; };
  for (std::size_t t = 0; t < 12; ++t)
    if (out.terms[t].defined()) accumulate(out.terms[t]);
  for (std::size_t t = 12; t < 18; ++t)
    if (out.terms[t].defined()) accumulate(scale(out.terms[t], beta));
  out.total = total;
  return out;
}

// ---------------------------------------------------------------------------
// Stage two

enum class SlotSource { Refined, CrossSum, SelfCompensated, Zero };

struct ImcOutput {
  Tensor y_all;                                  // [B, outputs]
  Tensor fused;                                  // [B, T, 3D], slots in A, T, V order
  std::array<Tensor, kNumModalities> slots;      // [B, T, D] each
  std::array<SlotSource, kNumModalities> source{};
  std::array<Tensor, kNumModalities> x_s, x_c;   // bottleneck samples of available modalities
};

/// Stage-two forward on a batch whose samples share one availability
/// pattern; unavailable modalities are never read.
///
/// Ablations: without complementation, missing slots are zero. Without MCD,
/// every use of a common sample X_c falls back to the specific sample X_s;
/// without MSD, X_s falls back to X_c and attention uses the shared module.
inline ImcOutput imc_forward(const TMDCParams& p, const Batch& batch, NoiseSource& noise, const ModelOptions& opts,
                             const AblationConfig& ablation = {}) {
  ablation.validate();
  const ModalitySet avail = batch.available;
  if (avail.empty()) throw ProtocolError("imc_forward: no modality available");
  const std::size_t T = p.dims.seq_len;
  const std::size_t D = p.dims.dim;
  ImcOutput out;

  for (Modality m : kModalities) {
    if (!avail.contains(m)) continue;
    const std::size_t i = index_of(m);
    const Tensor& x = detail::checked_input(batch.input(m), m, p.dims.feat_dims[i]);
    if (ablation.use_msd) {
      const auto& s = p.spe[i];
      const Tensor z = conv1d_standardize(x, s.conv, T, batch.length(m));
      out.x_s[i] = vib_forward(s.vib, z, noise.gaussian(z.shape()), opts.sigma_mode).sample;
    }
    if (ablation.use_mcd) {
      const Tensor z = conv1d_standardize(pad_lastdim(x, p.dims.shared_in_dim()), p.com.conv, T, batch.length(m));
      out.x_c[i] = vib_forward(p.com.vib, z, noise.gaussian(z.shape()), opts.sigma_mode).sample;
    }
    if (!ablation.use_msd) out.x_s[i] = out.x_c[i];
    if (!ablation.use_mcd) out.x_c[i] = out.x_s[i];
  }

  auto attention_of = [&](std::size_t owner) -> const MHAParams& {
    return ablation.use_msd ? p.spe[owner].mha : p.com.mha;
  };
  auto refine = [&](std::size_t owner, const Tensor& query, const Tensor& kv) {
    return dropout(residual_fc(p.all_resfc[owner], mha(attention_of(owner), query, kv)), opts.dropout, noise);
  };

  std::vector<std::size_t> present;
  for (Modality m : kModalities)
    if (avail.contains(m)) present.push_back(index_of(m));

  for (std::size_t i : present) {
    out.slots[i] = refine(i, out.x_s[i], out.x_c[i]);
    out.source[i] = SlotSource::Refined;
  }

  const Shape slot_shape{batch.size(), T, D};
  if (!ablation.use_imc_complement || present.size() == kNumModalities) {
    for (std::size_t i = 0; i < kNumModalities; ++i) {
      if (out.slots[i].defined()) continue;
      out.slots[i] = Tensor::zeros(slot_shape);
      out.source[i] = SlotSource::Zero;
    }
  } else if (present.size() == 2) {
    const std::size_t a = present[0];
    const std::size_t b = present[1];
    const std::size_t missing = kNumModalities - a - b;
    const bool kv_owner = opts.cross_owner == CrossOwner::KeyValue;
    const Tensor a2b = refine(kv_owner ? b : a, out.x_c[a], out.x_s[b]);
    const Tensor b2a = refine(kv_owner ? a : b, out.x_c[b], out.x_s[a]);
    out.slots[missing] = add(a2b, b2a);
    out.source[missing] = SlotSource::CrossSum;
  } else {
    const std::size_t a = present[0];
    const Tensor self = refine(a, out.x_c[a], out.x_s[a]);
    for (std::size_t i = 0; i < kNumModalities; ++i) {
      if (i == a) continue;
      out.slots[i] = self;
      out.source[i] = SlotSource::SelfCompensated;
    }
  }

  out.fused = concat_lastdim({out.slots[0], out.slots[1], out.slots[2]});
  out.y_all = predict_head(p.fuse_head, out.fused);
  return out;
}

inline Tensor imc_loss(const TMDCParams& p, const Batch& batch, TaskKind task, NoiseSource& noise,
                       const ModelOptions& opts, const AblationConfig& ablation = {}) {
  return task_loss(imc_forward(p, batch, noise, opts, ablation).y_all, batch, task);
}

}  // namespace tmdc
