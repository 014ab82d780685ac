// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint directories: one TMDF file per parameter (plus Adam moments and
// the selected snapshot) and an index.json carrying metadata and a digest.
// The digest covers the index body and every referenced file, so any edit to
// either is detected on load.
//
// Each stored array x is written at storage precision (binary32) plus a
// [4, n] sidecar holding, per element, the binary exponent and three signed
// 18-bit slices of the 53-bit significand. Every sidecar entry is an integer
// below 2^24, so binary32 holds it exactly and the binary64 value is restored
// bit-for-bit, subnormals included; a resumed run continues identically.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "json.hpp"

#include "tmdc/tmdf.hpp"
#include "tmdc/train.hpp"

namespace tmdc {

class CheckpointError : public Error {
 public:
  enum class Kind { MissingFile, DigestMismatch, ShapeMismatch, GroupMismatch, Corrupt };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace ckpt_detail {

inline constexpr const char* kIndex = "index.json";
inline constexpr int kFormatVersion = 1;

inline std::string file_stem(const std::string& name) {
  std::string s = name;
  for (char& c : s)
    if (c == '.') c = '_';
  return s;
}

inline std::set<std::string> active_groups(const TMDCParams& p, const AblationConfig& ablation) {
  std::set<std::string> g;
  for (const auto& np : trainable_parameters(p, ablation)) g.insert(np.group);
  return g;
}

/// Digest over the index (without its digest field) followed by every
/// referenced file's bytes in index order.
inline std::uint64_t compute_digest(const std::filesystem::path& dir, const nlohmann::ordered_json& index) {
  nlohmann::ordered_json body = index;
  body.erase("digest");
  const std::string text = body.dump();
  std::uint64_t h = fnv1a(std::vector<std::uint8_t>(text.begin(), text.end()));
  for (const auto& [name, rec] : index.at("params").items()) {
    for (const auto& [key, rel] : rec.at("files").items()) {
      const auto path = dir / rel.get<std::string>();
      if (!std::filesystem::exists(path)) {
        throw CheckpointError(CheckpointError::Kind::MissingFile, "checkpoint: missing file " + path.string());
      }
      h = fnv1a(tmdf::read_bytes(path), h);
    }
  }
  return h;
}

inline constexpr std::size_t kExactRows = 4;

/// Rows: exponent, then significand slices of weight 2^35, 2^17, 2^0.
inline std::vector<double> split_exact(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> out(kExactRows * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    int e = 0;
    const double m = std::ldexp(std::frexp(x[i], &e), 53);  // signed integer, |m| < 2^53
    const double c1 = std::trunc(m / 0x1p35);
    const double rest = m - c1 * 0x1p35;
    const double c2 = std::trunc(rest / 0x1p17);
    out[i] = e;
    out[n + i] = c1;
    out[2 * n + i] = c2;
    out[3 * n + i] = rest - c2 * 0x1p17;
  }
  return out;
}

inline std::vector<double> join_exact(const Tensor& parts, std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = parts[n + i] * 0x1p35 + parts[2 * n + i] * 0x1p17 + parts[3 * n + i];
    x[i] = std::copysign(std::ldexp(std::abs(m), static_cast<int>(parts[i]) - 53), parts[n + i]);  // keeps -0
  }
  return x;
}

/// Writes <stem>.tmdf and <stem>.res.tmdf; records both under `key`.
inline void write_exact(const std::filesystem::path& dir, const std::string& stem, const std::string& key,
                        const Shape& shape, const std::vector<double>& x, nlohmann::ordered_json& files) {
  write_tensor(dir / (stem + ".tmdf"), Tensor(shape, x));
  write_tensor(dir / (stem + ".res.tmdf"), Tensor({kExactRows, x.size()}, split_exact(x)));
  files[key] = stem + ".tmdf";
  files[key + "_res"] = stem + ".res.tmdf";
}

}  // namespace ckpt_detail

/// Writes `state` into `dir` (created if needed). Returns the digest.
inline std::string checkpoint_save(const TrainState& state, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "params");
  const auto active = ckpt_detail::active_groups(state.params, state.config.ablation);

  nlohmann::ordered_json index;
  index["format"] = "tmdc-checkpoint";
  index["version"] = ckpt_detail::kFormatVersion;
  index["stage"] = to_string(state.stage);
  index["epochs_done"] = state.epochs_done;
  index["task_kind"] = to_string(state.task);
  index["class_count"] = state.num_classes;
  const ModelDims& d = state.params.dims;
  index["dims"] = {{"feat_dims", d.feat_dims}, {"dim", d.dim},         {"seq_len", d.seq_len},
                   {"heads", d.heads},         {"outputs", d.outputs}};
  index["config"] = to_json(state.config);
  index["adam"] = {{"lr", state.adam.lr},
                   {"beta1", state.adam.beta1},
                   {"beta2", state.adam.beta2},
                   {"eps", state.adam.eps},
                   {"step", state.adam.step}};
  index["best"] = state.best ? nlohmann::ordered_json{{"metric", state.best_metric}, {"epoch", state.best_epoch}}
                             : nlohmann::ordered_json(nullptr);
  index["active_groups"] = std::vector<std::string>(active.begin(), active.end());

  std::map<std::string, Tensor> best_by_name;
  if (state.best)
    for (const auto& np : state.best->named_parameters()) best_by_name[np.name] = np.tensor;

  auto& params = index["params"];
  params = nlohmann::ordered_json::object();
  for (const auto& np : state.params.named_parameters()) {
    if (!active.count(np.group)) continue;
    const std::string stem = "params/" + ckpt_detail::file_stem(np.name);
    nlohmann::ordered_json rec;
    rec["group"] = np.group;
    rec["shape"] = np.tensor.shape();
    nlohmann::ordered_json files = nlohmann::ordered_json::object();
    const Shape& shape = np.tensor.shape();
    const auto values = [](const Tensor& t) { return std::vector<double>(t.data().begin(), t.data().end()); };
    ckpt_detail::write_exact(dir, stem, "value", shape, values(np.tensor), files);
    if (auto it = state.adam.moments.find(np.name); it != state.adam.moments.end()) {
      ckpt_detail::write_exact(dir, stem + ".m", "m", shape, it->second.m, files);
      ckpt_detail::write_exact(dir, stem + ".v", "v", shape, it->second.v, files);
    }
    if (state.best) ckpt_detail::write_exact(dir, stem + ".best", "best", shape, values(best_by_name.at(np.name)), files);
    rec["files"] = std::move(files);
    params[np.name] = std::move(rec);
  }
  const std::string digest = hex64(ckpt_detail::compute_digest(dir, index));
  index["digest"] = digest;
  std::ofstream f(dir / ckpt_detail::kIndex, std::ios::trunc);
  if (!f) throw FormatError(FormatError::Kind::Io, "cannot write " + (dir / ckpt_detail::kIndex).string());
  f << index.dump(2) << '\n';
  return digest;
}

/// Digest recorded in a checkpoint's index, without verifying it.
inline std::string checkpoint_digest(const std::filesystem::path& dir) {
  std::ifstream f(dir / ckpt_detail::kIndex);
  if (!f) throw CheckpointError(CheckpointError::Kind::MissingFile, "checkpoint: no index in " + dir.string());
  return nlohmann::json::parse(f).at("digest").get<std::string>();
}

/// Loads and verifies a checkpoint. When `expect` is given, its ablation
/// must activate exactly the parameter groups stored in the checkpoint.
inline TrainState checkpoint_load(const std::filesystem::path& dir, const AblationConfig* expect = nullptr) {
  namespace fs = std::filesystem;
  using K = CheckpointError::Kind;
  const fs::path index_path = dir / ckpt_detail::kIndex;
  if (!fs::exists(index_path)) throw CheckpointError(K::MissingFile, "checkpoint: no index in " + dir.string());
  nlohmann::ordered_json index;
  try {
    std::ifstream f(index_path);
    index = nlohmann::ordered_json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(K::Corrupt, "checkpoint: unreadable index: " + std::string(e.what()));
  }

  TrainState st;
  try {
    if (index.at("format") != "tmdc-checkpoint" || index.at("version") != ckpt_detail::kFormatVersion) {
      throw CheckpointError(K::Corrupt, "checkpoint: unsupported format in " + index_path.string());
    }
    const std::string recorded = index.at("digest").get<std::string>();
    const std::string actual = hex64(ckpt_detail::compute_digest(dir, index));
    if (recorded != actual) {
      throw CheckpointError(K::DigestMismatch, "checkpoint: digest mismatch (index says " + recorded + ", contents hash to " +
                                                   actual + ")");
    }

    st.config = config_from_json(index.at("config"));
    st.stage = index.at("stage") == "imd" ? Stage::Imd : Stage::Imc;
    st.epochs_done = index.at("epochs_done").get<std::size_t>();
    st.task = parse_task(index.at("task_kind").get<std::string>());
    st.num_classes = index.at("class_count").get<std::size_t>();
    const auto& a = index.at("adam");
    st.adam.lr = a.at("lr").get<double>();
    st.adam.beta1 = a.at("beta1").get<double>();
    st.adam.beta2 = a.at("beta2").get<double>();
    st.adam.eps = a.at("eps").get<double>();
    st.adam.step = a.at("step").get<std::uint64_t>();

    ModelDims dims;
    const auto& jd = index.at("dims");
    dims.feat_dims = jd.at("feat_dims").get<std::array<std::size_t, kNumModalities>>();
    dims.dim = jd.at("dim").get<std::size_t>();
    dims.seq_len = jd.at("seq_len").get<std::size_t>();
    dims.heads = jd.at("heads").get<std::size_t>();
    dims.outputs = jd.at("outputs").get<std::size_t>();
    st.params = TMDCParams::init(dims, st.config.seed);

    const auto stored = index.at("active_groups").get<std::set<std::string>>();
    if (expect) {
      const auto wanted = ckpt_detail::active_groups(st.params, *expect);
      if (wanted != stored) {
        throw CheckpointError(K::GroupMismatch, "checkpoint: parameter groups were saved for '" +
                                                    st.config.ablation.name() + "', incompatible with '" +
                                                    expect->name() + "'");
      }
    }

    const bool has_best = !index.at("best").is_null();
    TMDCParams best;
    if (has_best) {
      best = st.params.clone();
      st.best_metric = index.at("best").at("metric").get<double>();
      st.best_epoch = index.at("best").at("epoch").get<std::size_t>();
    }
    std::map<std::string, Tensor> best_by_name;
    if (has_best)
      for (const auto& np : best.named_parameters()) best_by_name[np.name] = np.tensor;

    const auto& params = index.at("params");
    std::size_t seen = 0;
    for (const auto& np : st.params.named_parameters()) {
      if (!stored.count(np.group)) continue;
      if (!params.contains(np.name)) throw CheckpointError(K::Corrupt, "checkpoint: parameter " + np.name + " not stored");
      const auto& rec = params.at(np.name);
      ++seen;
      const auto& files = rec.at("files");
      auto load = [&](const std::string& key) {
        const Tensor hi = read_tensor(dir / files.at(key).get<std::string>());
        if (hi.shape() != np.tensor.shape()) {
          throw CheckpointError(K::ShapeMismatch, "checkpoint: " + np.name + " stored as " + to_string(hi.shape()) +
                                                      ", model expects " + to_string(np.tensor.shape()));
        }
        const Tensor res = read_tensor(dir / files.at(key + "_res").get<std::string>());
        const std::size_t n = hi.numel();
        if (res.shape() != Shape{ckpt_detail::kExactRows, n}) {
          throw CheckpointError(K::ShapeMismatch, "checkpoint: residual of " + np.name + " has shape " + to_string(res.shape()));
        }
        return ckpt_detail::join_exact(res, n);
      };
      auto assign = [](Tensor dst, const std::vector<double>& x) { std::copy(x.begin(), x.end(), dst.mutable_data().begin()); };
      assign(np.tensor, load("value"));
      if (files.contains("m")) {
        AdamMoments mom;
        mom.m = load("m");
        mom.v = load("v");
        st.adam.moments[np.name] = std::move(mom);
      }
      if (has_best) assign(best_by_name.at(np.name), load("best"));
    }
    if (seen != params.size()) throw CheckpointError(K::Corrupt, "checkpoint: index lists unknown parameters");
    if (has_best) st.best = std::move(best);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(K::Corrupt, "checkpoint: malformed index: " + std::string(e.what()));
  }
  return st;
}

}  // namespace tmdc
