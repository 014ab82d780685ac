// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "oracle.hpp"
#include "tmdc/model.hpp"

using namespace tmdc;
using oracle::Mat;

namespace {

constexpr std::size_t kD = 8, kT = 3;

ModelDims tiny_dims(std::size_t outputs = 2) {
  ModelDims d;
  d.feat_dims = {4, 6, 5};
  d.dim = kD;
  d.seq_len = kT;
  d.heads = 4;
  d.outputs = outputs;
  return d;
}

Tensor randn(const Shape& s, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(numel(s));
  for (double& x : v) x = n(rng);
  return Tensor(s, std::move(v));
}

/// Two samples with ragged lengths (one shorter and one longer than T).
Dataset tiny_dataset(std::uint64_t seed, std::size_t n = 2, bool classification = true) {
  Rng rng(seed);
  Dataset d;
  d.task = classification ? TaskKind::Classification : TaskKind::Regression;
  d.num_classes = classification ? 2 : 1;
  const auto dims = tiny_dims().feat_dims;
  for (std::size_t i = 0; i < n; ++i) {
    ModalityBundle b;
    b.id = "t" + std::to_string(i);
    for (Modality m : kModalities) {
      const std::size_t L = (i + index_of(m)) % 2 == 0 ? kT + 1 : kT - 1;
      b.features[index_of(m)] = randn({L, dims[index_of(m)]}, rng);
    }
    b.label = classification ? static_cast<double>(i % 2) : 0.3 * static_cast<double>(i) - 0.2;
    d.samples.push_back(std::move(b));
  }
  return d;
}

Batch batch_of(const Dataset& d, ModalitySet pattern = ModalitySet::all()) {
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_batch(with_missing(d, pattern), idx);
}

Tensor single(const Tensor& x) {
  Shape s{1};
  s.insert(s.end(), x.shape().begin(), x.shape().end());
  return Tensor(s, std::vector<double>(x.data().begin(), x.data().end()));
}

void expect_near(const Tensor& t, const Mat& m, double tol, std::size_t block = 0, const char* what = "") {
  ASSERT_EQ(t.dim(-1), m.c) << what;
  for (std::size_t i = 0; i < m.v.size(); ++i) EXPECT_NEAR(t[block * m.v.size() + i], m.v[i], tol) << what << " @" << i;
}

void expect_near(const Tensor& t, const std::vector<double>& v, double tol, std::size_t block = 0, const char* what = "") {
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(t[block * v.size() + i], v[i], tol) << what << " @" << i;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

const ModelOptions kTrainOpts{SigmaMode::Softplus, CrossOwner::KeyValue, 0.3};

/// Reference branch on sample `b` of a batch, given the batch-wide frozen draws.
oracle::Branch reference_branch(const TMDCParams& p, const Dataset& d, std::size_t b, Modality m, bool common,
                                const Tensor& eps, const Tensor& keep, double rate) {
  const std::size_t i = index_of(m);
  Mat x = oracle::from_tensor(d.samples[b].features[i]);
  if (common) {
    x = oracle::pad_cols(x, p.dims.shared_in_dim());
    const auto& h = p.com_heads[i];
    return oracle::branch(p.com.conv, p.com.vib, p.com.mha, p.com.resfc, h.head_c, h.head_com, x, kT,
                          oracle::from_tensor(eps, b), oracle::from_tensor(keep, b), rate);
  }
  const auto& s = p.spe[i];
  return oracle::branch(s.conv, s.vib, s.mha, s.resfc, s.head_s, s.head_spe, x, kT, oracle::from_tensor(eps, b),
                        oracle::from_tensor(keep, b), rate);
}

}  // namespace

// --- parameters -------------------------------------------------------------

TEST(Params, NamesGroupsAndSharedStorage) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 1);
  std::set<std::string> names;
  for (const auto& np : p.named_parameters()) EXPECT_TRUE(names.insert(np.name).second) << np.name;
  EXPECT_TRUE(names.count("spe.A.conv.kernel"));
  EXPECT_TRUE(names.count("com.vib.mu.weight"));
  EXPECT_TRUE(names.count("fuse.weight"));
  // One shared conv whose input width covers the widest modality.
  EXPECT_EQ(p.com.conv.kernel.shape(), (Shape{3, 6, kD}));
  EXPECT_EQ(p.fuse_head.weight.shape(), (Shape{3 * kD, 2}));
  const TMDCParams q = TMDCParams::init(tiny_dims(), 1);
  for (std::size_t i = 0; i < p.named_parameters().size(); ++i)
    EXPECT_EQ(values(p.named_parameters()[i].tensor), values(q.named_parameters()[i].tensor));
}

TEST(Params, CloneIsIndependent) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 2);
  TMDCParams c = p.clone();
  c.com.vib.mu_head.weight.mutable_data()[0] += 1.0;
  EXPECT_NE(p.com.vib.mu_head.weight[0], c.com.vib.mu_head.weight[0]);
}

// --- MSD / MCD --------------------------------------------------------------

TEST(MSD, MatchesStraightLineOracle) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 3);
  Rng rng(4);
  const Tensor x = randn({4, 6}, rng);  // text: L = 4 > T
  NoiseSource noise(99);
  const BranchOutput o = msd_forward(p, single(x), Modality::Text, noise, kTrainOpts);
  oracle::Draws draws(99);
  const Mat eps = draws.gaussian(kT, kD);
  const Mat keep = draws.keep(kT, kD, kTrainOpts.dropout);
  const auto& s = p.spe[1];
  const auto ref = oracle::branch(s.conv, s.vib, s.mha, s.resfc, s.head_s, s.head_spe, oracle::from_tensor(x), kT, eps,
                                  keep, kTrainOpts.dropout);
  expect_near(o.standardized, ref.standardized, 1e-12, 0, "standardized");
  expect_near(o.vib.sample, ref.b.sample, 1e-12, 0, "X_s");
  expect_near(o.attended, ref.attended, 1e-12, 0, "attended");
  expect_near(o.refined, ref.refined, 1e-12, 0, "refined");
  expect_near(o.y_vib, ref.y_vib, 1e-12, 0, "y_s");
  expect_near(o.y_att, ref.y_att, 1e-12, 0, "y_Spe");
  EXPECT_NEAR(o.vib.kl.item(), ref.b.kl, 1e-12);
}

TEST(MCD, MatchesStraightLineOracleWithSharedWeights) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 5);
  Rng rng(6);
  const Tensor x = randn({2, 4}, rng);  // audio: narrower than the shared width, L = 2 < T
  NoiseSource noise(7);
  const BranchOutput o = mcd_forward(p, single(x), Modality::Audio, noise, kTrainOpts);
  oracle::Draws draws(7);
  const Mat eps = draws.gaussian(kT, kD);
  const Mat keep = draws.keep(kT, kD, kTrainOpts.dropout);
  const auto& h = p.com_heads[0];
  const auto ref = oracle::branch(p.com.conv, p.com.vib, p.com.mha, p.com.resfc, h.head_c, h.head_com,
                                  oracle::pad_cols(oracle::from_tensor(x), 6), kT, eps, keep, kTrainOpts.dropout);
  expect_near(o.vib.sample, ref.b.sample, 1e-12, 0, "X_c");
  expect_near(o.refined, ref.refined, 1e-12, 0, "refined");
  expect_near(o.y_vib, ref.y_vib, 1e-12, 0, "y_c");
  expect_near(o.y_att, ref.y_att, 1e-12, 0, "y_Com");
}

TEST(MSD, ZeroInputWithZeroNoiseGivesBiasRows) {
  TMDCParams p = TMDCParams::init(tiny_dims(), 8);
  for (std::size_t j = 0; j < kD; ++j) p.spe[0].vib.mu_head.bias.mutable_data()[j] = 0.1 * static_cast<double>(j);
  NoiseSource ev = NoiseSource::eval();
  const BranchOutput o = msd_forward(p, Tensor::zeros({1, 3, 4}), Modality::Audio, ev, kTrainOpts);
  for (std::size_t t = 0; t < kT; ++t)
    for (std::size_t j = 0; j < kD; ++j) EXPECT_EQ(o.vib.sample[t * kD + j], 0.1 * static_cast<double>(j));
}

TEST(MSD, AttentionSiteIsResidual) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 9);
  Rng rng(10);
  NoiseSource noise(11);
  const BranchOutput o = msd_forward(p, randn({2, 3, 5}, rng), Modality::Video, noise, kTrainOpts);
  const Tensor xs = o.vib.sample;
  EXPECT_EQ(values(o.attended), values(add(mha(p.spe[2].mha, xs, xs), xs)));
  const Tensor diff = sub(o.attended, mha(p.spe[2].mha, xs, xs));
  for (std::size_t i = 0; i < xs.numel(); ++i) EXPECT_NEAR(diff[i], xs[i], 1e-15);
}

TEST(MCD, SameStandardizedInputGivesSameXc) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 12);
  Rng rng(13);
  const Tensor a = randn({1, 3, 4}, rng);
  // Video (width 5) carrying audio's columns plus a zero column pads to the same shared input.
  std::vector<double> v;
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t j = 0; j < 4; ++j) v.push_back(a[t * 4 + j]);
    v.push_back(0.0);
  }
  NoiseSource n1 = NoiseSource::eval(), n2 = NoiseSource::eval();
  const BranchOutput oa = mcd_forward(p, a, Modality::Audio, n1, kTrainOpts);
  const BranchOutput ov = mcd_forward(p, Tensor({1, 3, 5}, v), Modality::Video, n2, kTrainOpts);
  EXPECT_EQ(values(oa.vib.sample), values(ov.vib.sample));
  EXPECT_EQ(values(oa.refined), values(ov.refined));
}

TEST(MCD, SharedWeightMutationReachesEveryModality) {
  TMDCParams p = TMDCParams::init(tiny_dims(), 14);
  const Dataset d = tiny_dataset(15);
  const Batch b = batch_of(d);
  auto xc = [&] {
    std::array<std::vector<double>, 3> out;
    for (Modality m : kModalities) {
      NoiseSource ev = NoiseSource::eval();
      out[index_of(m)] = values(mcd_forward(p, b.input(m), m, ev, kTrainOpts, b.length(m)).vib.sample);
    }
    return out;
  };
  const auto before = xc();
  for (const Tensor* shared : {&p.com.vib.mu_head.weight, &p.com.conv.kernel}) {
    Tensor w = *shared;
    w.mutable_data()[0] += 0.5;
    const auto after = xc();
    for (std::size_t m = 0; m < 3; ++m) EXPECT_NE(before[m], after[m]) << "modality " << m;
    w.mutable_data()[0] -= 0.5;
  }
}

TEST(MSD, SpecificParametersStayInTheirModality) {
  TMDCParams p = TMDCParams::init(tiny_dims(), 16);
  const Dataset d = tiny_dataset(17);
  const Batch b = batch_of(d);
  auto outputs = [&] {
    std::array<std::vector<double>, 3> out;
    for (Modality m : kModalities) {
      NoiseSource ev = NoiseSource::eval();
      const BranchOutput o = msd_forward(p, b.input(m), m, ev, kTrainOpts, b.length(m));
      out[index_of(m)] = values(o.refined);
      const auto y = values(o.y_att);
      out[index_of(m)].insert(out[index_of(m)].end(), y.begin(), y.end());
    }
    return out;
  };
  const auto before = outputs();
  p.for_each([&](const std::string& name, const std::string& group, Tensor& t) {
    if (group.rfind("msd.", 0) != 0) return;
    const std::size_t owner = index_of(group.back() == 'A' ? Modality::Audio : group.back() == 'T' ? Modality::Text : Modality::Video);
    const auto saved = values(t);
    for (double& v : t.mutable_data()) v += 0.3;
    const auto after = outputs();
    for (std::size_t m = 0; m < 3; ++m)
      if (m != owner) EXPECT_EQ(before[m], after[m]) << name << " leaked into modality " << m;
    std::copy(saved.begin(), saved.end(), t.mutable_data().begin());
  });
}

// --- stage-one loss ---------------------------------------------------------

TEST(IMDLoss, MatchesTermByTermOracle) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 18);
  const Dataset d = tiny_dataset(19);
  const Batch b = batch_of(d);
  const double beta = 0.01;
  NoiseSource noise(20);
  const ImdLoss loss = imd_loss(p, b, TaskKind::Classification, beta, noise, kTrainOpts);

  // Replay the draws in forward order: per modality, specific then common.
  NoiseSource replay(20);
  std::array<double, 18> ref{};
  for (Modality m : kModalities) {
    const std::size_t i = index_of(m);
    for (bool common : {false, true}) {
      const Tensor eps = replay.gaussian({2, kT, kD});
      const Tensor keep = replay.keep_mask({2, kT, kD}, kTrainOpts.dropout);
      double l_vib = 0, l_att = 0, kl = 0;
      for (std::size_t s = 0; s < 2; ++s) {
        const auto br = reference_branch(p, d, s, m, common, eps, keep, kTrainOpts.dropout);
        const auto label = static_cast<std::size_t>(d.samples[s].label);
        l_vib += oracle::cross_entropy(br.y_vib, label) / 2;
        l_att += oracle::cross_entropy(br.y_att, label) / 2;
        kl += br.b.kl / 2;
      }
      ref[(common ? kLc : kLs) + i] = l_vib;
      ref[(common ? kLCom : kLSpe) + i] = l_att;
      ref[(common ? kKLc : kKLs) + i] = kl;
    }
  }
  double total = 0.0;
  for (std::size_t t = 0; t < 18; ++t) {
    EXPECT_NEAR(loss.terms[t].item(), ref[t], 1e-12) << imd_term_names()[t];
    total += t < 12 ? ref[t] : beta * ref[t];
  }
  EXPECT_NEAR(loss.total.item(), total, 1e-10);
}

TEST(IMDLoss, BetaZeroIsSumOfTaskTerms) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 21);
  const Batch b = batch_of(tiny_dataset(22));
  NoiseSource n(23);
  const ImdLoss l = imd_loss(p, b, TaskKind::Classification, 0.0, n, kTrainOpts);
  double s = 0.0;
  for (std::size_t t = 0; t < 12; ++t) s += l.terms[t].item();
  EXPECT_NEAR(l.total.item(), s, 1e-12);
}

TEST(IMDLoss, PerfectRegressionWithStandardPosteriorIsZero) {
  TMDCParams p = TMDCParams::init(tiny_dims(1), 24);
  const double pre = std::log(std::expm1(1.0 - 1e-6));
  auto zero = [](Tensor t) { std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0); };
  auto setup_vib = [&](VIBParams& v) {
    zero(v.mu_head.weight), zero(v.mu_head.bias), zero(v.sigma_head.weight);
    std::fill(v.sigma_head.bias.mutable_data().begin(), v.sigma_head.bias.mutable_data().end(), pre);
  };
  for (auto& s : p.spe) {
    setup_vib(s.vib);
    zero(s.head_s.weight), zero(s.head_spe.weight), zero(s.head_s.bias), zero(s.head_spe.bias);
  }
  setup_vib(p.com.vib);
  for (auto& h : p.com_heads) zero(h.head_c.weight), zero(h.head_com.weight), zero(h.head_c.bias), zero(h.head_com.bias);
  Dataset d = tiny_dataset(25, 2, false);
  for (auto& s : d.samples) s.label = 0.0;
  NoiseSource ev = NoiseSource::eval();
  EXPECT_NEAR(imd_loss(p, batch_of(d), TaskKind::Regression, 0.01, ev, kTrainOpts).total.item(), 0.0, 1e-12);
}

TEST(IMDLoss, RejectsIncompleteBatch) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 26);
  NoiseSource n(27);
  EXPECT_THROW(imd_loss(p, batch_of(tiny_dataset(28), ModalitySet::parse("A,T")), TaskKind::Classification, 0.01, n,
                        kTrainOpts),
               ProtocolError);
}

// --- stage two --------------------------------------------------------------

TEST(IMC, TwoAvailableMatchesStraightLineOracle) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 29);
  const Dataset d = tiny_dataset(30);
  const Batch b = batch_of(d, ModalitySet::parse("A,V"));
  NoiseSource noise(31);
  const ImcOutput out = imc_forward(p, b, noise, kTrainOpts);
  EXPECT_EQ(out.source[1], SlotSource::CrossSum);

  const double r = kTrainOpts.dropout;
  NoiseSource replay(31);
  const Shape s{2, kT, kD};
  const Tensor eps_sa = replay.gaussian(s), eps_ca = replay.gaussian(s);
  const Tensor eps_sv = replay.gaussian(s), eps_cv = replay.gaussian(s);
  const Tensor k_a = replay.keep_mask(s, r), k_v = replay.keep_mask(s, r);
  const Tensor k_a2v = replay.keep_mask(s, r), k_v2a = replay.keep_mask(s, r);
  for (std::size_t smp = 0; smp < 2; ++smp) {
    auto sample = [&](const Conv1DParams& conv, const VIBParams& vib, Modality m, const Tensor& eps, bool pad) {
      Mat x = oracle::from_tensor(d.samples[smp].features[index_of(m)]);
      if (pad) x = oracle::pad_cols(x, 6);
      return oracle::vib(vib, oracle::conv_standardize(x, conv, kT), oracle::from_tensor(eps, smp)).sample;
    };
    const Mat xs_a = sample(p.spe[0].conv, p.spe[0].vib, Modality::Audio, eps_sa, false);
    const Mat xc_a = sample(p.com.conv, p.com.vib, Modality::Audio, eps_ca, true);
    const Mat xs_v = sample(p.spe[2].conv, p.spe[2].vib, Modality::Video, eps_sv, false);
    const Mat xc_v = sample(p.com.conv, p.com.vib, Modality::Video, eps_cv, true);
    auto refine = [&](std::size_t owner, const Mat& q, const Mat& kv, const Tensor& keep) {
      return oracle::inverted_dropout(oracle::residual(oracle::attention(p.spe[owner].mha, q, kv), p.all_resfc[owner]),
                                      oracle::from_tensor(keep, smp), r);
    };
    const Mat all_a = refine(0, xs_a, xc_a, k_a);
    const Mat all_v = refine(2, xs_v, xc_v, k_v);
    const Mat a2v = refine(2, xc_a, xs_v, k_a2v);  // key/value owner: video
    const Mat v2a = refine(0, xc_v, xs_a, k_v2a);
    const Mat comp = oracle::plus(a2v, v2a);
    const Mat fused = oracle::hconcat({all_a, comp, all_v});
    expect_near(out.fused, fused, 1e-12, smp, "fused");
    expect_near(out.y_all, oracle::head(fused, p.fuse_head), 1e-12, smp, "y_All");
  }
}

TEST(IMC, SingleAvailableRepeatsCompensatedSlot) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 32);
  for (Modality m : kModalities) {
    NoiseSource n(33);
    const ImcOutput o = imc_forward(p, batch_of(tiny_dataset(34), ModalitySet::of(m)), n, kTrainOpts);
    std::vector<std::size_t> others;
    for (std::size_t i = 0; i < 3; ++i)
      if (i != index_of(m)) others.push_back(i);
    EXPECT_EQ(o.source[index_of(m)], SlotSource::Refined);
    EXPECT_EQ(o.source[others[0]], SlotSource::SelfCompensated);
    EXPECT_TRUE(o.slots[others[0]].same_storage(o.slots[others[1]]));
    const std::size_t W = 3 * kD;
    for (std::size_t row = 0; row < 2 * kT; ++row)
      for (std::size_t j = 0; j < kD; ++j)
        EXPECT_EQ(o.fused[row * W + others[0] * kD + j], o.fused[row * W + others[1] * kD + j]);
  }
}

TEST(IMC, MaskedContentNeverRead) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 35);
  for (ModalitySet pattern : all_patterns()) {
    if (pattern.complete()) continue;
    const Dataset d = tiny_dataset(36);
    Batch b = batch_of(d, pattern);
    NoiseSource n1(37);
    const auto ref = values(imc_forward(p, b, n1, kTrainOpts).y_all);
    Rng rng(38);
    for (Modality m : kModalities) {
      if (pattern.contains(m)) continue;
      b.inputs[index_of(m)] = randn(b.inputs[index_of(m)].shape(), rng, 100.0);
    }
    NoiseSource n2(37);
    EXPECT_EQ(values(imc_forward(p, b, n2, kTrainOpts).y_all), ref) << pattern.to_string();
  }
}

TEST(IMC, NoModalityIsAProtocolError) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 39);
  Batch b = batch_of(tiny_dataset(40));
  b.available = ModalitySet::none();
  NoiseSource n(41);
  EXPECT_THROW(imc_forward(p, b, n, kTrainOpts), ProtocolError);
}

TEST(IMC, DeterministicForSameSeed) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 42);
  const Batch b = batch_of(tiny_dataset(43), ModalitySet::parse("T,V"));
  NoiseSource n1(44), n2(44);
  EXPECT_EQ(values(imc_forward(p, b, n1, kTrainOpts).y_all), values(imc_forward(p, b, n2, kTrainOpts).y_all));
}

TEST(IMC, QueryOwnerSwitchChangesOnlyCrossPasses) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 45);
  ModelOptions q = kTrainOpts;
  q.cross_owner = CrossOwner::Query;
  for (const char* pat : {"A,T,V", "A,T"}) {
    const Batch b = batch_of(tiny_dataset(46), ModalitySet::parse(pat));
    NoiseSource n1(47), n2(47);
    const auto kv = values(imc_forward(p, b, n1, kTrainOpts).y_all);
    const auto qo = values(imc_forward(p, b, n2, q).y_all);
    if (std::string(pat) == "A,T,V") {
      EXPECT_EQ(kv, qo);
    } else {
      EXPECT_NE(kv, qo);
    }
  }
}

// --- ablations --------------------------------------------------------------

TEST(Ablation, ConfigValidationAndNames) {
  EXPECT_THROW(AblationConfig::without({"msd", "mcd"}), ConfigError);
  EXPECT_THROW(AblationConfig::without({"xyz"}), ConfigError);
  EXPECT_EQ(AblationConfig::full().name(), "full");
  EXPECT_EQ(AblationConfig::without({"imc"}).name(), "w/o imc");
  EXPECT_TRUE(AblationConfig::full() == AblationConfig{});
}

TEST(Ablation, FullConfigReproducesDefaultForward) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 48);
  const Batch b = batch_of(tiny_dataset(49), ModalitySet::parse("T"));
  NoiseSource n1(50), n2(50);
  EXPECT_EQ(values(imc_forward(p, b, n1, kTrainOpts).y_all),
            values(imc_forward(p, b, n2, kTrainOpts, AblationConfig::full()).y_all));
}

TEST(Ablation, WithoutComplementCoincidesWhenComplete) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 51);
  const Batch b = batch_of(tiny_dataset(52));
  NoiseSource n1(53), n2(53);
  const ImcOutput full = imc_forward(p, b, n1, kTrainOpts);
  const ImcOutput wo = imc_forward(p, b, n2, kTrainOpts, AblationConfig::without({"imc"}));
  EXPECT_EQ(values(full.fused), values(wo.fused));
  EXPECT_EQ(values(full.y_all), values(wo.y_all));
}

TEST(Ablation, WithoutComplementZeroesMissingSlots) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 54);
  const Batch b = batch_of(tiny_dataset(55), ModalitySet::parse("A"));
  NoiseSource n(56);
  const ImcOutput o = imc_forward(p, b, n, kTrainOpts, AblationConfig::without({"imc"}));
  EXPECT_EQ(o.source[1], SlotSource::Zero);
  for (double v : o.slots[1].data()) EXPECT_EQ(v, 0.0);
  for (double v : o.slots[2].data()) EXPECT_EQ(v, 0.0);
}

TEST(Ablation, WithoutModulesFallBackAndDropParameters) {
  const TMDCParams p = TMDCParams::init(tiny_dims(), 57);
  const Batch b = batch_of(tiny_dataset(58), ModalitySet::parse("A,T"));
  for (const char* tag : {"mcd", "msd"}) {
    const AblationConfig ab = AblationConfig::without({tag});
    NoiseSource n(59);
    const ImcOutput o = imc_forward(p, b, n, kTrainOpts, ab);
    for (std::size_t i : {0u, 1u}) EXPECT_EQ(values(o.x_s[i]), values(o.x_c[i])) << tag;
    for (const auto& np : trainable_parameters(p, ab)) {
      const bool removed = std::string(tag) == "msd" ? np.name.rfind("spe.", 0) == 0 : np.group.rfind("mcd.", 0) == 0;
      EXPECT_FALSE(removed) << np.name;
    }
    ImdLoss l;
    NoiseSource n2(60);
    l = imd_loss(p, batch_of(tiny_dataset(58)), TaskKind::Classification, 0.01, n2, kTrainOpts, ab);
    const std::size_t defined = static_cast<std::size_t>(std::count_if(l.terms.begin(), l.terms.end(), [](const Tensor& t) { return t.defined(); }));
    EXPECT_EQ(defined, 9u);
  }
  std::size_t spe = 0;
  for (const auto& np : p.named_parameters()) spe += np.name.rfind("spe.", 0) == 0;
  EXPECT_EQ(trainable_parameters(p, AblationConfig::without({"msd"})).size(), p.named_parameters().size() - spe);
}

// --- gradient flow ----------------------------------------------------------

TEST(Gradients, EveryParameterReceivesSignal) {
  std::size_t total = 0, nonzero = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TMDCParams p = TMDCParams::init(tiny_dims(), 100 + seed);
    const Dataset d = tiny_dataset(200 + seed, 4);
    p.zero_grad();
    NoiseSource n1(seed), n2(seed + 50);
    backward(add(imd_loss(p, batch_of(d), TaskKind::Classification, 0.01, n1, kTrainOpts).total,
                 imc_loss(p, batch_of(d), TaskKind::Classification, n2, kTrainOpts)));
    for (const auto& np : p.named_parameters()) {
      ++total;
      bool any = false;
      for (double g : np.tensor.grad()) any = any || g != 0.0;
      nonzero += any;
    }
  }
  EXPECT_GT(static_cast<double>(nonzero), 0.99 * static_cast<double>(total)) << nonzero << "/" << total;
}

TEST(Gradients, MissingAudioLeavesItsSpecificGroupUntouched) {
  TMDCParams p = TMDCParams::init(tiny_dims(), 61);
  p.zero_grad();
  NoiseSource n(62);
  backward(imc_loss(p, batch_of(tiny_dataset(63), ModalitySet::parse("T,V")), TaskKind::Classification, n, kTrainOpts));
  for (const auto& np : p.named_parameters()) {
    if (np.group != "msd.A") continue;
    for (double g : np.tensor.grad()) ASSERT_EQ(g, 0.0) << np.name;
  }
}
