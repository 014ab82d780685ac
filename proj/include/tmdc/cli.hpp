// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit status: 0 success, 2 usage or configuration
// error, 1 runtime failure. Every artifact-producing command leaves a
// run.json next to its outputs.

#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "tmdc/checkpoint.hpp"
#include "tmdc/diagnostics.hpp"
#include "tmdc/tmdf.hpp"
#include "tmdc/train.hpp"

namespace tmdc::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

/// Training flags. Unset optionals keep the profile's value.
struct TrainFlags {
  std::string profile = "synth";
  std::uint64_t seed = 0;
  std::optional<std::string> pattern;
  std::optional<double> noise_sigma, beta, lr, dropout;
  std::optional<std::size_t> batch_size, dim, epochs_imd, epochs_imc, seq_len;
  std::vector<std::string> ablate;
  std::optional<std::string> sigma_mode, cross_owner;
};

inline void add_train_flags(CLI::App* app, TrainFlags& f) {
  app->add_option("--profile", f.profile, "Hyperparameter profile")
      ->check(CLI::IsMember({"mosi", "mosei", "iemocap", "synth"}))
      ->capture_default_str();
  app->add_option("--seed", f.seed, "Master seed")->capture_default_str();
  app->add_option("--pattern", f.pattern, "Available modalities, comma subset of A,T,V");
  app->add_option("--noise-sigma", f.noise_sigma, "Gaussian corruption std on normalized features");
  app->add_option("--beta", f.beta, "Bottleneck KL weight");
  app->add_option("--lr", f.lr, "Adam learning rate");
  app->add_option("--batch-size", f.batch_size, "Mini-batch size");
  app->add_option("--dropout", f.dropout, "Dropout rate");
  app->add_option("--dim", f.dim, "Model width D");
  app->add_option("--epochs-imd", f.epochs_imd, "Stage-one epochs");
  app->add_option("--epochs-imc", f.epochs_imc, "Stage-two epochs");
  app->add_option("--seq-len", f.seq_len, "Standardized sequence length T (0: longest training sequence)");
  app->add_option("--ablate", f.ablate, "Remove a component: imd|imc|msd|mcd (repeatable)")
      ->check(CLI::IsMember({"imd", "imc", "msd", "mcd"}));
  app->add_option("--sigma-mode", f.sigma_mode, "Bottleneck scale head")
      ->check(CLI::IsMember({"softplus", "exp-half-logvar"}));
  app->add_option("--cross-owner", f.cross_owner, "Which modality's refinement weights serve a cross pass")
      ->check(CLI::IsMember({"kv-owner", "query-owner"}));
}

/// Overlays the explicitly given flags on `base`.
inline TrainConfig apply_flags(TrainConfig c, const TrainFlags& f, bool from_profile) {
  if (from_profile) c.seed = f.seed;
  if (f.pattern) c.scenario.pattern = ModalitySet::parse(*f.pattern);
  if (f.noise_sigma) c.scenario.noise_sigma = *f.noise_sigma;
  if (f.beta) c.beta = *f.beta;
  if (f.lr) c.lr = *f.lr;
  if (f.dropout) c.dropout = *f.dropout;
  if (f.batch_size) c.batch_size = *f.batch_size;
  if (f.dim) c.dim = *f.dim;
  if (f.epochs_imd) c.imd_epochs = *f.epochs_imd;
  if (f.epochs_imc) c.imc_epochs = *f.epochs_imc;
  if (f.seq_len) c.seq_len = *f.seq_len;
  if (!f.ablate.empty()) c.ablation = AblationConfig::without(f.ablate);
  if (f.sigma_mode) c.sigma_mode = *f.sigma_mode == "softplus" ? SigmaMode::Softplus : SigmaMode::ExpHalfLogVar;
  if (f.cross_owner) c.cross_owner = *f.cross_owner == "kv-owner" ? CrossOwner::KeyValue : CrossOwner::Query;
  c.validate();
  return c;
}

inline TrainConfig config_from_flags(const TrainFlags& f) { return apply_flags(profile_config(f.profile), f, true); }

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

inline void write_json(const fs::path& path, const ojson& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
  f << j.dump(2) << '\n';
}

inline void write_run_record(const fs::path& out, const std::string& command, const ojson& config,
                             const std::vector<std::string>& outputs, const ojson& extra = ojson::object()) {
  ojson r;
  r["command"] = command;
  r["config"] = config;
  r["seed"] = config.contains("seed") ? config["seed"] : ojson(nullptr);
  r["outputs"] = outputs;
  for (const auto& [k, v] : extra.items()) r[k] = v;
  r["created_utc"] = utc_timestamp();
  write_json(out / "run.json", r);
}

inline void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string(flag) + ": required");
}

inline const Dataset& split_of(const PreparedSplits& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "val") return d.val;
  if (split == "test") return d.test;
  throw ConfigError("split: expected train|val|test, got " + split);
}

/// Parses a numeric CSV (comma or whitespace separated, '#' comments) into a
/// [rows, cols] tensor.
inline Tensor read_csv_matrix(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string());
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    for (char& ch : line)
      if (ch == ',' || ch == ';' || ch == '\t' || ch == '\r') ch = ' ';
    std::istringstream in(line);
    std::size_t n = 0;
    std::string tok;
    while (in >> tok) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size())
        throw FormatError(FormatError::Kind::Manifest, path.string() + ":" + std::to_string(line_no) + ": not a number: " + tok);
      values.push_back(v);
      ++n;
    }
    if (n == 0) continue;
    if (cols == 0) cols = n;
    if (n != cols) {
      throw FormatError(FormatError::Kind::Manifest, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                                         std::to_string(cols) + " columns, got " + std::to_string(n));
    }
    ++rows;
  }
  if (rows == 0) throw FormatError(FormatError::Kind::Manifest, path.string() + ": no numeric rows");
  return Tensor({rows, cols}, std::move(values));
}

/// Checkpoint plus the effective config for a follow-up command: the
/// checkpoint's config with any explicitly given flags laid over it.
inline std::pair<TrainState, TrainConfig> load_with_flags(const std::string& dir, const TrainFlags& f) {
  std::optional<AblationConfig> expect;
  if (!f.ablate.empty()) expect = AblationConfig::without(f.ablate);
  TrainState st = checkpoint_load(dir, expect ? &*expect : nullptr);
  TrainConfig c = apply_flags(st.config, f, false);
  return {std::move(st), c};
}

inline ojson metrics_row(const std::string& variant, const MetricReport& r) {
  ojson j = to_json(r);
  j["variant"] = variant;
  return j;
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_gen_synth(const std::string& out, std::uint64_t seed, const SynthSpec& base) {
  require(out, "out");
  SynthSpec spec = base;
  spec.seed = seed;
  const SplitDataset ds = gen_synthetic(spec);
  write_dataset(out, ds);
  ojson cfg;
  cfg["seed"] = seed;
  cfg["samples"] = spec.n_samples;
  cfg["shared_dim"] = spec.shared_dim;
  cfg["task"] = spec.task == SynthTask::Binary ? "binary" : spec.task == SynthTask::Quadrant ? "quadrant" : "regression";
  cfg["private_dims"] = spec.private_dims;
  cfg["seq_lens"] = spec.seq_lens;
  cfg["feat_dims"] = spec.feat_dims;
  cfg["private_scale"] = spec.private_scale;
  cfg["noise_std"] = spec.noise_std;
  write_run_record(out, "gen-synth", cfg, {"train.json", "val.json", "test.json", "features/"},
                   {{"sizes", {ds.train.size(), ds.val.size(), ds.test.size()}}});
  std::cout << "wrote " << ds.train.size() << "/" << ds.val.size() << "/" << ds.test.size()
            << " train/val/test samples to " << out << '\n';
  return 0;
}

inline int cmd_convert(const std::string& input, const std::string& out) {
  require(input, "input");
  require(out, "out");
  const Tensor t = read_csv_matrix(input);
  write_tensor(out, t);
  std::cout << "wrote " << to_string(t.shape()) << " to " << out << '\n';
  return 0;
}

inline int cmd_train_imd(const TrainFlags& f, const std::string& data, const std::string& init, const std::string& out) {
  require(data, "data");
  require(out, "out");
  const SplitDataset raw = read_dataset(data);
  std::optional<TrainState> resume;
  TrainConfig c = config_from_flags(f);
  if (!init.empty()) {
    auto [st, cc] = load_with_flags(init, f);
    resume = std::move(st);
    c = cc;
  }
  const ImdRun run = train_imd(c, raw.train, std::move(resume));
  const fs::path o(out);
  const std::string digest = checkpoint_save(run.state, o / "checkpoint");
  write_loss_csv((o / "imd_losses.csv").string(), run.table);
  ojson totals = ojson::array();
  for (const auto& row : run.table) totals.push_back({{"epoch", row.epoch}, {"total", row.total}});
  write_run_record(o, "train-imd", to_json(run.state.config), {"checkpoint/", "imd_losses.csv"},
                   {{"checkpoint_digest", digest}, {"epoch_totals", totals}});
  if (!run.table.empty()) {
    std::cout << "stage one: epoch " << run.table.back().epoch << " total " << run.table.back().total << '\n';
  }
  return 0;
}

inline int cmd_train_imc(const TrainFlags& f, const std::string& data, const std::string& init, const std::string& out) {
  require(data, "data");
  require(out, "out");
  const SplitDataset raw = read_dataset(data);
  TrainConfig c = config_from_flags(f);
  std::optional<TrainState> start;
  if (!init.empty()) {
    auto [st, cc] = load_with_flags(init, f);
    if (st.stage == Stage::Imc) c = cc;  // resume keeps the stored run's settings
    start = std::move(st);
  }
  const ImcRun run = train_imc(c, raw, std::move(start));
  const fs::path o(out);
  const std::string digest = checkpoint_save(run.state, o / "checkpoint");
  write_json(o / "metrics.json", to_json(run.test));
  {
    std::ofstream h(o / "history.csv", std::ios::trunc);
    h.precision(17);
    h << "epoch,train_loss,val_metric\n";
    for (std::size_t e = 0; e < run.train_loss.size(); ++e) {
      h << (run.state.epochs_done - run.train_loss.size() + e + 1) << ',' << run.train_loss[e] << ',';
      if (e < run.val_metric.size()) h << run.val_metric[e];
      h << '\n';
    }
  }
  const PreparedSplits prepared = prepare_splits(raw, run.state.config.scenario, run.state.config.seed);
  std::vector<std::string> outputs{"checkpoint/", "metrics.json", "history.csv"};
  for (const char* split : {"train", "val", "test"}) {
    const Dataset& d = split_of(prepared, split);
    if (d.empty()) continue;
    write_tensor(o / "embeddings" / (std::string(split) + ".tmdf"), fused_embeddings(run.state.selected(), d, run.state.config));
    outputs.push_back("embeddings/" + std::string(split) + ".tmdf");
  }
  write_run_record(o, "train-imc", to_json(run.state.config), outputs,
                   {{"checkpoint_digest", digest}, {"best_epoch", run.state.best_epoch}});
  std::cout << "stage two: test " << (run.test.binary ? "ACC " : "WA ") << run.test.primary() << '\n';
  return 0;
}

inline int cmd_eval(const TrainFlags& f, const std::string& data, const std::string& init, const std::string& out,
                    const std::string& split) {
  require(data, "data");
  require(init, "init");
  const SplitDataset raw = read_dataset(data);
  auto [st, c] = load_with_flags(init, f);
  const PreparedSplits prepared = prepare_splits(raw, c.scenario, c.seed);
  const MetricReport r = evaluate(st.selected(), split_of(prepared, split), c);
  ojson j = to_json(r);
  j["split"] = split;
  j["pattern"] = c.scenario.pattern.to_string();
  j["noise_sigma"] = c.scenario.noise_sigma;
  if (!out.empty()) {
    write_json(fs::path(out) / "metrics.json", j);
    write_run_record(out, "eval", to_json(c), {"metrics.json"}, {{"checkpoint", init}});
  }
  std::cout << j.dump() << '\n';
  return 0;
}

inline int cmd_ablate(const TrainFlags& f, const std::string& data, const std::string& out) {
  require(data, "data");
  require(out, "out");
  const SplitDataset raw = read_dataset(data);
  TrainFlags base_flags = f;
  base_flags.ablate.clear();
  const TrainConfig base = config_from_flags(base_flags);
  std::vector<std::string> variants{"full"};
  if (f.ablate.empty()) variants.insert(variants.end(), {"imd", "imc", "msd", "mcd"});
  else variants.insert(variants.end(), f.ablate.begin(), f.ablate.end());

  ojson rows = ojson::array();
  for (const auto& v : variants) {
    TrainConfig c = base;
    if (v != "full") c.ablation = AblationConfig::without({v});
    const ImcRun run = run_two_stage(c, raw);
    rows.push_back(metrics_row(c.ablation.name(), run.test));
    std::cout << std::left << std::setw(10) << c.ablation.name() << ' ' << run.test.primary() << '\n';
  }
  ojson j;
  j["pattern"] = base.scenario.pattern.to_string();
  j["noise_sigma"] = base.scenario.noise_sigma;
  j["rows"] = rows;
  write_json(fs::path(out) / "ablation.json", j);
  write_run_record(out, "ablate", to_json(base), {"ablation.json"});
  return 0;
}

inline int cmd_noise_grid(const TrainFlags& f, const std::string& data, const std::string& out) {
  require(data, "data");
  require(out, "out");
  const SplitDataset raw = read_dataset(data);
  const TrainConfig base = config_from_flags(f);
  ojson rows = ojson::array();
  ojson table = ojson::object();
  for (double sigma : kNoiseGrid) {
    TrainConfig imd_cfg = base;
    imd_cfg.scenario = {ModalitySet::all(), sigma};
    std::optional<TrainState> pre;
    if (base.ablation.use_imd_pretrain) pre = train_imd(imd_cfg, raw.train).state;
    for (ModalitySet pattern : all_patterns()) {
      TrainConfig c = base;
      c.scenario = {pattern, sigma};
      const ImcRun run = train_imc(c, raw, pre);
      ojson row = to_json(run.test);
      row["pattern"] = pattern.to_string();
      row["noise_sigma"] = sigma;
      rows.push_back(row);
      std::ostringstream key;
      key << sigma;
      table[pattern.to_string()][key.str()] = run.test.primary();
      std::cout << std::left << std::setw(7) << pattern.to_string() << " sigma=" << std::setw(4) << sigma << ' '
                << run.test.primary() << '\n';
    }
  }
  ojson j;
  j["metric"] = raw.train.task == TaskKind::Classification && raw.train.num_classes > 2 ? "wa" : "acc";
  j["table"] = table;
  j["rows"] = rows;
  write_json(fs::path(out) / "noise_grid.json", j);
  write_run_record(out, "noise-grid", to_json(base), {"noise_grid.json"});
  return 0;
}

inline int cmd_analyze_cosine(const TrainFlags& f, const std::string& data, const std::string& init,
                              const std::string& out, const std::string& split) {
  require(data, "data");
  require(init, "init");
  require(out, "out");
  const SplitDataset raw = read_dataset(data);
  auto [st, c] = load_with_flags(init, f);
  const PreparedSplits prepared = prepare_splits(raw, c.scenario, c.seed);
  const CosineReport rep = cosine_analysis(st.selected(), split_of(prepared, split), c);
  const fs::path o(out);
  fs::create_directories(o);
  write_cosine_csv((o / "cosine.csv").string(), rep);
  ojson j;
  j["labels"] = cosine_labels();
  j["matrix"] = rep.matrix;
  j["zero_norm_pairs"] = rep.zero_norm_pairs;
  j["zero_norm_flag"] = rep.zero_norm_pairs > 0;
  j["samples"] = rep.samples;
  j["pattern"] = c.scenario.pattern.to_string();
  write_json(o / "cosine.json", j);
  write_run_record(o, "analyze-cosine", to_json(c), {"cosine.csv", "cosine.json"}, {{"checkpoint", init}});
  std::cout << "cosine matrix over " << rep.samples << " samples written to " << (o / "cosine.csv").string() << '\n';
  return 0;
}

inline int cmd_gradcheck(std::uint64_t seed, const std::string& out) {
  constexpr double kTol = 1e-4;
  const auto entries = gradcheck_suite({}, seed);
  bool ok = true;
  ojson rows = ojson::array();
  for (const auto& e : entries) {
    const bool pass = e.result.max_rel_error < kTol;
    ok = ok && pass;
    std::cout << std::left << std::setw(34) << e.name << ' ' << std::scientific << std::setprecision(3)
              << e.result.max_rel_error << (pass ? "  ok" : "  FAIL") << '\n';
    rows.push_back({{"name", e.name}, {"max_rel_error", e.result.max_rel_error}, {"coordinates", e.result.coordinates}});
  }
  if (!out.empty()) {
    write_json(fs::path(out) / "gradcheck.json", {{"tolerance", kTol}, {"entries", rows}, {"pass", ok}});
    write_run_record(out, "gradcheck", {{"seed", seed}}, {"gradcheck.json"});
  }
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Two-stage multimodal denoising and complementation engine", "tmdc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "tmdc 1.0.0");

  std::string data, init, out, input, split = "test", synth_task = "binary";
  TrainFlags flags;
  SynthSpec synth;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic latent-factor dataset");
  gen->add_option("--seed", seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", out, "Output dataset directory")->required();
  gen->add_option("--samples", synth.n_samples, "Number of samples")->capture_default_str();
  gen->add_option("--shared-dim", synth.shared_dim, "Latent dimension k")->capture_default_str();
  gen->add_option("--task", synth_task, "binary|quadrant|regression")
      ->check(CLI::IsMember({"binary", "quadrant", "regression"}))
      ->capture_default_str();
  gen->add_option("--private-scale", synth.private_scale, "Scale of per-step private factors")->capture_default_str();
  gen->add_option("--noise-std", synth.noise_std, "Observation noise std")->capture_default_str();
  gen->add_option("--seq-lens", synth.seq_lens, "Sequence length per modality (A T V)")->capture_default_str();
  gen->add_option("--feat-dims", synth.feat_dims, "Feature width per modality (A T V)")->capture_default_str();

  auto* conv = app.add_subcommand("convert", "Convert a numeric CSV matrix into a TMDF tensor file");
  conv->add_option("--input", input, "CSV file, one row per time step")->required();
  conv->add_option("--out", out, "Output .tmdf path")->required();

  auto* imd = app.add_subcommand("train-imd", "Stage one: intra-modality denoising on complete data");
  auto* imc = app.add_subcommand("train-imc", "Stage two: inter-modality complementation under a missing pattern");
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint under a scenario");
  auto* abl = app.add_subcommand("ablate", "Train the full model and its ablations under one scenario");
  auto* grid = app.add_subcommand("noise-grid", "Train and test every missing pattern at every noise level");
  auto* cos = app.add_subcommand("analyze-cosine", "Cosine similarity of specific and common representations");
  for (auto* sc : {imd, imc, ev, abl, grid, cos}) {
    add_train_flags(sc, flags);
    sc->add_option("--data", data, "Dataset directory holding train/val/test manifests")->required();
    sc->add_option("--out", out, "Output directory");
  }
  for (auto* sc : {imd, imc}) sc->add_option("--init", init, "Checkpoint directory to start from");
  for (auto* sc : {ev, cos}) {
    sc->add_option("--init", init, "Checkpoint directory")->required();
    sc->add_option("--split", split, "train|val|test")->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  }

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every layer and both stage losses");
  gc->add_option("--seed", seed, "Initialization seed")->capture_default_str();
  gc->add_option("--out", out, "Optional output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "tmdc: " << e.what() << '\n';
    return 2;
  }

  try {
    if (gen->parsed()) {
      synth.task = synth_task == "binary" ? SynthTask::Binary : synth_task == "quadrant" ? SynthTask::Quadrant : SynthTask::Regression;
      return cmd_gen_synth(out, seed, synth);
    }
    if (conv->parsed()) return cmd_convert(input, out);
    if (imd->parsed()) return cmd_train_imd(flags, data, init, out);
    if (imc->parsed()) return cmd_train_imc(flags, data, init, out);
    if (ev->parsed()) return cmd_eval(flags, data, init, out, split);
    if (abl->parsed()) return cmd_ablate(flags, data, out);
    if (grid->parsed()) return cmd_noise_grid(flags, data, out);
    if (cos->parsed()) return cmd_analyze_cosine(flags, data, init, out, split);
    if (gc->parsed()) return cmd_gradcheck(seed, out);
  } catch (const ConfigError& e) {
    std::cerr << "tmdc: invalid configuration: " << e.what() << '\n';
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "tmdc: --init: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "tmdc: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace tmdc::cli
