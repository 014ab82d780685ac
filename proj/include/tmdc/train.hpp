// SPDX-License-Identifier: Apache-2.0
//
// Two-stage training loops, evaluation and analysis exporters.

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "tmdc/data.hpp"
#include "tmdc/metrics.hpp"
#include "tmdc/model.hpp"
#include "tmdc/optim.hpp"

namespace tmdc {

struct TrainConfig {
  std::string profile = "synth";
  std::size_t dim = 256;
  std::size_t seq_len = 0;  // 0: longest raw sequence in the training split
  std::size_t heads = 4;
  double lr = 1e-4;
  std::size_t batch_size = 32;
  double dropout = 0.5;
  double beta = 0.01;
  std::size_t imd_epochs = 80;
  std::size_t imc_epochs = 100;
  std::uint64_t seed = 0;
  Scenario scenario;
  AblationConfig ablation;
  SigmaMode sigma_mode = SigmaMode::Softplus;
  CrossOwner cross_owner = CrossOwner::KeyValue;

  ModelOptions model_options() const { return {sigma_mode, cross_owner, dropout}; }

  void validate() const {
    if (dim == 0) throw ConfigError("dim: must be >= 1");
    if (heads == 0 || dim % heads != 0) throw ConfigError("dim: must be divisible by " + std::to_string(heads) + " heads");
    if (!(lr >= 0.0)) throw ConfigError("lr: must be non-negative");
    if (batch_size == 0) throw ConfigError("batch-size: must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout: must lie in [0, 1)");
    if (!(beta >= 0.0)) throw ConfigError("beta: must be non-negative");
    scenario.validate();
    ablation.validate();
  }
};

/// Hyperparameter defaults per dataset profile. The three corpus profiles
/// carry the published settings; "synth" is the desk-scale setting used for
/// the synthetic generator.
inline TrainConfig profile_config(const std::string& profile) {
  TrainConfig c;
  c.profile = profile;
  if (profile == "mosi") {
    c.batch_size = 32, c.dropout = 0.5, c.imd_epochs = 80, c.imc_epochs = 100;
  } else if (profile == "mosei") {
    c.batch_size = 64, c.dropout = 0.6, c.imd_epochs = 50, c.imc_epochs = 100;
  } else if (profile == "iemocap") {
    c.batch_size = 16, c.dropout = 0.5, c.imd_epochs = 50, c.imc_epochs = 100;
  } else if (profile == "synth") {
    c.dim = 16, c.lr = 2e-3, c.batch_size = 32, c.dropout = 0.1, c.imd_epochs = 8, c.imc_epochs = 8;
  } else {
    throw ConfigError("profile: unknown profile \"" + profile + "\" (expected mosi|mosei|iemocap|synth)");
  }
  return c;
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["profile"] = c.profile;
  j["dim"] = c.dim;
  j["seq_len"] = c.seq_len;
  j["heads"] = c.heads;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["dropout"] = c.dropout;
  j["beta"] = c.beta;
  j["epochs_imd"] = c.imd_epochs;
  j["epochs_imc"] = c.imc_epochs;
  j["seed"] = c.seed;
  j["pattern"] = c.scenario.pattern.to_string();
  j["noise_sigma"] = c.scenario.noise_sigma;
  j["ablate"] = c.ablation.removed();
  j["sigma_mode"] = c.sigma_mode == SigmaMode::Softplus ? "softplus" : "exp-half-logvar";
  j["cross_owner"] = c.cross_owner == CrossOwner::KeyValue ? "kv-owner" : "query-owner";
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.profile = j.at("profile").get<std::string>();
  c.dim = j.at("dim").get<std::size_t>();
  c.seq_len = j.at("seq_len").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.beta = j.at("beta").get<double>();
  c.imd_epochs = j.at("epochs_imd").get<std::size_t>();
  c.imc_epochs = j.at("epochs_imc").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.scenario.pattern = ModalitySet::parse(j.at("pattern").get<std::string>());
  c.scenario.noise_sigma = j.at("noise_sigma").get<double>();
  c.ablation = AblationConfig::without(j.at("ablate").get<std::vector<std::string>>());
  c.sigma_mode = j.at("sigma_mode").get<std::string>() == "softplus" ? SigmaMode::Softplus : SigmaMode::ExpHalfLogVar;
  c.cross_owner = j.at("cross_owner").get<std::string>() == "kv-owner" ? CrossOwner::KeyValue : CrossOwner::Query;
  return c;
}

// ---------------------------------------------------------------------------
// State

enum class Stage { Imd, Imc };

inline std::string to_string(Stage s) { return s == Stage::Imd ? "imd" : "imc"; }

struct TrainState {
  TrainConfig config;
  TaskKind task = TaskKind::Classification;
  std::size_t num_classes = 2;
  TMDCParams params;
  AdamState adam;
  Stage stage = Stage::Imd;
  std::size_t epochs_done = 0;
  // Stage-two model selection.
  std::optional<TMDCParams> best;
  double best_metric = -1.0;
  std::size_t best_epoch = 0;

  /// Parameters used for reporting: the selected snapshot when present.
  const TMDCParams& selected() const { return best ? *best : params; }
};

inline ModelDims model_dims(const TrainConfig& c, const Dataset& train) {
  ModelDims d;
  d.feat_dims = train.feat_dims();
  d.dim = c.dim;
  d.seq_len = c.seq_len ? c.seq_len : train.max_len();
  d.heads = c.heads;
  d.outputs = train.task == TaskKind::Regression ? 1 : train.num_classes;
  return d;
}

inline TrainState init_state(const TrainConfig& c, const Dataset& train) {
  c.validate();
  if (train.empty()) throw ProtocolError("training split is empty");
  TrainState s;
  s.config = c;
  s.task = train.task;
  s.num_classes = train.num_classes;
  s.params = TMDCParams::init(model_dims(c, train), c.seed);
  s.adam.lr = c.lr;
  return s;
}

// ---------------------------------------------------------------------------
// Data preparation

enum : std::uint64_t { kStreamNoise = 0x4E01, kStreamImd = 0x1D, kStreamImc = 0x1C, kStreamShuffle = 0x5F };

inline std::uint64_t split_tag(const std::string& split) {
  std::uint64_t h = 0;
  for (char ch : split) h = h * 131 + static_cast<unsigned char>(ch);
  return h;
}

/// z-scores with training-split statistics, masks to `scenario.pattern` and
/// adds the scenario's Gaussian corruption to the available modalities. The
/// corruption of a given (sample, modality) does not depend on the pattern.
inline Dataset prepare_split(const Dataset& raw, const FeatureStats& stats, const Scenario& scenario, std::uint64_t seed) {
  Dataset d = with_missing(normalize(raw, stats), scenario.pattern);
  return with_noise(std::move(d), scenario.noise_sigma, derive_seed({seed, kStreamNoise, split_tag(raw.split)}));
}

// ---------------------------------------------------------------------------
// Loss table

struct LossRow {
  std::size_t epoch = 0;
  std::array<double, 18> terms{};
  double total = 0.0;
};

using LossTable = std::vector<LossRow>;

inline void write_loss_csv(const std::string& path, const LossTable& table) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot write " + path);
  f << "epoch";
  for (const auto& n : imd_term_names()) f << ',' << n;
  f << '\n';
  f.precision(17);
  for (const auto& row : table) {
    f << row.epoch;
    for (double v : row.terms) f << ',' << v;
    f << '\n';
  }
}

// ---------------------------------------------------------------------------
// Evaluation

/// Eval-mode (eps = 0, dropout off) stage-two predictions over `d`.
inline std::vector<double> predict(const TMDCParams& p, const Dataset& d, const TrainConfig& c) {
  NoGradGuard no_grad;
  ModelOptions opts = c.model_options();
  std::vector<double> preds;
  preds.reserve(d.size());
  NoiseSource noise = NoiseSource::eval();
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < d.size(); start += c.batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(d.size(), start + c.batch_size); ++i) idx.push_back(i);
    const Batch b = make_batch(d, idx);
    const Tensor y = imc_forward(p, b, noise, opts, c.ablation).y_all;
    const std::size_t C = y.dim(-1);
    for (std::size_t r = 0; r < b.size(); ++r) {
      const double* row = y.data().data() + r * C;
      if (d.task == TaskKind::Regression) preds.push_back(row[0]);
      else preds.push_back(static_cast<double>(std::max_element(row, row + C) - row));
    }
  }
  return preds;
}

inline MetricReport evaluate(const TMDCParams& p, const Dataset& d, const TrainConfig& c) {
  if (d.empty()) throw ProtocolError("evaluate: empty evaluation set");
  std::vector<double> labels;
  for (const auto& s : d.samples) labels.push_back(s.label);
  return compute_metrics(predict(p, d, c), labels, d.task, d.num_classes);
}

// ---------------------------------------------------------------------------
// Stage one

struct ImdRun {
  TrainState state;
  LossTable table;
};

/// Minimizes the stage-one objective on the complete training split for
/// `config.imd_epochs` epochs (continuing from `resume` when given).
inline ImdRun train_imd(const TrainConfig& config, const Dataset& train_raw, std::optional<TrainState> resume = {}) {
  config.validate();
  if (train_raw.empty()) throw ProtocolError("train_imd: empty training split");
  for (const auto& s : train_raw.samples)
    if (!s.available.complete()) throw ProtocolError("train_imd: sample " + s.id + " is missing modalities");

  ImdRun run;
  if (resume) {
    if (resume->stage != Stage::Imd) throw ProtocolError("train_imd: cannot resume from a stage-two checkpoint");
    run.state = std::move(*resume);
    run.state.params = run.state.params.clone();
    run.state.config.imd_epochs = config.imd_epochs;
  } else {
    run.state = init_state(config, train_raw);
  }
  TrainState& st = run.state;
  const TrainConfig& c = st.config;
  const Scenario clean_pattern{ModalitySet::all(), c.scenario.noise_sigma};
  const Dataset train = prepare_split(train_raw, compute_stats(train_raw), clean_pattern, c.seed);
  const ModelOptions opts = c.model_options();
  const auto params = trainable_parameters(st.params, c.ablation);

  for (std::size_t epoch = st.epochs_done; epoch < c.imd_epochs; ++epoch) {
    // Each table row is the sample-weighted mean of the training batch losses
    // seen during the epoch, taken before each update.
    LossRow row;
    for (const auto& idx : batch_iter(train.size(), c.batch_size, derive_seed({c.seed, kStreamShuffle, kStreamImd}), epoch)) {
      const Batch b = make_batch(train, idx);
      st.params.zero_grad();
      NoiseSource noise(derive_seed({c.seed, kStreamImd, st.adam.step}));
      const ImdLoss loss = imd_loss(st.params, b, train.task, c.beta, noise, opts, c.ablation);
      const double w = static_cast<double>(b.size());
      for (std::size_t t = 0; t < row.terms.size(); ++t)
        if (loss.terms[t].defined()) row.terms[t] += w * loss.terms[t].item();
      row.total += w * loss.total.item();
      backward(loss.total);
      adam_step(params, st.adam);
    }
    for (double& v : row.terms) v /= static_cast<double>(train.size());
    row.total /= static_cast<double>(train.size());
    st.epochs_done = epoch + 1;
    row.epoch = epoch + 1;
    run.table.push_back(row);
  }
  return run;
}

// ---------------------------------------------------------------------------
// Stage two

struct ImcRun {
  TrainState state;
  MetricReport test;
  std::vector<double> train_loss;   // per epoch, mean over batches
  std::vector<double> val_metric;   // per epoch
};

struct PreparedSplits {
  Dataset train, val, test;
};

inline PreparedSplits prepare_splits(const SplitDataset& raw, const Scenario& scenario, std::uint64_t seed) {
  const FeatureStats stats = compute_stats(raw.train);
  return {prepare_split(raw.train, stats, scenario, seed), prepare_split(raw.val, stats, scenario, seed),
          prepare_split(raw.test, stats, scenario, seed)};
}

inline void check_same_modules(const AblationConfig& a, const AblationConfig& b) {
  if (a.use_msd != b.use_msd || a.use_mcd != b.use_mcd) {
    throw ConfigError("ablate: initial state was trained as '" + a.name() + "', incompatible with '" + b.name() + "'");
  }
}

/// Fine-tunes every active parameter plus the fusion head on the scenario's
/// masked (and corrupted) data, selecting the epoch with the best validation
/// metric. `init` is a stage-one state (fresh stage two), a stage-two state
/// (resume), or empty when stage one is ablated.
inline ImcRun train_imc(const TrainConfig& config, const SplitDataset& raw, std::optional<TrainState> init = {}) {
  config.validate();
  ImcRun run;
  if (!init) {
    if (config.ablation.use_imd_pretrain) {
      throw ConfigError("init: a stage-one checkpoint is required unless stage one is ablated (--ablate imd)");
    }
    run.state = init_state(config, raw.train);
    run.state.stage = Stage::Imc;
  } else if (init->stage == Stage::Imd) {
    check_same_modules(init->config.ablation, config.ablation);
    run.state.params = init->params.clone();
    run.state.task = init->task;
    run.state.num_classes = init->num_classes;
    run.state.config = config;
    run.state.adam.lr = config.lr;
    run.state.stage = Stage::Imc;
  } else {
    check_same_modules(init->config.ablation, config.ablation);
    run.state = std::move(*init);
    run.state.params = run.state.params.clone();
    if (run.state.best) run.state.best = run.state.best->clone();
    run.state.config.imc_epochs = config.imc_epochs;
  }
  TrainState& st = run.state;
  const TrainConfig& c = st.config;
  const PreparedSplits data = prepare_splits(raw, c.scenario, c.seed);
  const ModelOptions opts = c.model_options();
  const auto params = trainable_parameters(st.params, c.ablation);

  for (std::size_t epoch = st.epochs_done; epoch < c.imc_epochs; ++epoch) {
    double loss_sum = 0.0;
    for (const auto& idx :
         batch_iter(data.train.size(), c.batch_size, derive_seed({c.seed, kStreamShuffle, kStreamImc}), epoch)) {
      const Batch b = make_batch(data.train, idx);
      st.params.zero_grad();
      NoiseSource noise(derive_seed({c.seed, kStreamImc, st.adam.step}));
      const Tensor loss = imc_loss(st.params, b, data.train.task, noise, opts, c.ablation);
      backward(loss);
      adam_step(params, st.adam);
      loss_sum += loss.item() * static_cast<double>(b.size());
    }
    run.train_loss.push_back(loss_sum / static_cast<double>(data.train.size()));
    st.epochs_done = epoch + 1;
    if (!data.val.empty()) {
      const double metric = evaluate(st.params, data.val, c).primary();
      run.val_metric.push_back(metric);
      if (metric > st.best_metric) {
        st.best_metric = metric;
        st.best_epoch = epoch + 1;
        st.best = st.params.clone();
      }
    }
  }
  if (!data.test.empty()) run.test = evaluate(st.selected(), data.test, c);
  return run;
}

/// Stage one (unless ablated) followed by stage two.
inline ImcRun run_two_stage(const TrainConfig& c, const SplitDataset& raw) {
  std::optional<TrainState> init;
  if (c.ablation.use_imd_pretrain) init = train_imd(c, raw.train).state;
  return train_imc(c, raw, std::move(init));
}

// ---------------------------------------------------------------------------
// Analysis

inline const std::array<std::string, 6>& cosine_labels() {
  static const std::array<std::string, 6> l{"S_A", "S_T", "S_V", "C_A", "C_T", "C_V"};
  return l;
}

struct CosineReport {
  std::array<std::array<double, 6>, 6> matrix{};
  std::size_t zero_norm_pairs = 0;  // off-diagonal pairs recorded as 0
  std::size_t samples = 0;
};

/// Average pairwise cosine similarity of the time-pooled refined specific
/// (S_m) and common (C_m) representations, eval mode.
inline CosineReport cosine_analysis(const TMDCParams& p, const Dataset& d, const TrainConfig& c) {
  if (d.empty()) throw ProtocolError("cosine_analysis: empty evaluation set");
  NoGradGuard no_grad;
  NoiseSource noise = NoiseSource::eval();
  const ModelOptions opts = c.model_options();
  CosineReport rep;
  const std::size_t D = p.dims.dim;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < d.size(); start += c.batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(d.size(), start + c.batch_size); ++i) idx.push_back(i);
    Batch b = make_batch(d, idx);
    b.available = ModalitySet::all();  // masked inputs are zero; the branches still run on them
    const ImdForward f = imd_forward(p, b, noise, opts, c.ablation);
    std::array<Tensor, 6> pooled;
    for (std::size_t m = 0; m < 3; ++m) {
      if (f.specific[m].refined.defined()) pooled[m] = mean_over_time(f.specific[m].refined);
      if (f.common[m].refined.defined()) pooled[3 + m] = mean_over_time(f.common[m].refined);
    }
    for (std::size_t r = 0; r < b.size(); ++r) {
      std::array<const double*, 6> v{};
      std::array<double, 6> norm{};
      for (std::size_t k = 0; k < 6; ++k) {
        if (!pooled[k].defined()) continue;
        v[k] = pooled[k].data().data() + r * D;
        double s = 0.0;
        for (std::size_t j = 0; j < D; ++j) s += v[k][j] * v[k][j];
        norm[k] = std::sqrt(s);
      }
      for (std::size_t a = 0; a < 6; ++a) {
        rep.matrix[a][a] += 1.0;
        for (std::size_t bb = a + 1; bb < 6; ++bb) {
          double cs = 0.0;
          if (v[a] && v[bb] && norm[a] > 0 && norm[bb] > 0) {
            double dot = 0.0;
            for (std::size_t j = 0; j < D; ++j) dot += v[a][j] * v[bb][j];
            cs = std::clamp(dot / (norm[a] * norm[bb]), -1.0, 1.0);
          } else {
            ++rep.zero_norm_pairs;
          }
          rep.matrix[a][bb] += cs;
          rep.matrix[bb][a] += cs;
        }
      }
      ++rep.samples;
    }
  }
  for (auto& row : rep.matrix)
    for (double& x : row) x /= static_cast<double>(rep.samples);
  return rep;
}

inline void write_cosine_csv(const std::string& path, const CosineReport& rep) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot write " + path);
  f.precision(17);
  f << "";
  for (const auto& l : cosine_labels()) f << ',' << l;
  f << '\n';
  for (std::size_t a = 0; a < 6; ++a) {
    f << cosine_labels()[a];
    for (std::size_t b = 0; b < 6; ++b) f << ',' << rep.matrix[a][b];
    f << '\n';
  }
}

/// Time-pooled fused stage-two representation per sample, [N, 3D].
inline Tensor fused_embeddings(const TMDCParams& p, const Dataset& d, const TrainConfig& c) {
  if (d.empty()) throw ProtocolError("fused_embeddings: empty split");
  NoGradGuard no_grad;
  NoiseSource noise = NoiseSource::eval();
  const ModelOptions opts = c.model_options();
  std::vector<double> out;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < d.size(); start += c.batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(d.size(), start + c.batch_size); ++i) idx.push_back(i);
    const Tensor pooled = mean_over_time(imc_forward(p, make_batch(d, idx), noise, opts, c.ablation).fused);
    out.insert(out.end(), pooled.data().begin(), pooled.data().end());
  }
  const std::size_t W = kNumModalities * p.dims.dim;
  return Tensor({d.size(), W}, std::move(out));
}

}  // namespace tmdc
