// SPDX-License-Identifier: Apache-2.0
//
// TMDF tensor files and dataset manifests.
//
// TMDF layout (little-endian):
//   "TMDF" | u32 version = 1 | u8 dtype = 1 (binary32) | u8 ndim (1..4) |
//   u16 reserved = 0 | u32 dims[ndim] | binary32 payload, row-major

#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "tmdc/data.hpp"
#include "tmdc/tensor.hpp"

static_assert(std::endian::native == std::endian::little, "TMDF I/O assumes a little-endian host");

namespace tmdc {

class FormatError : public Error {
 public:
  enum class Kind { BadMagic, VersionMismatch, BadDtype, Truncated, TrailingData, DimOverflow, InvalidShape, Io, Manifest };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace tmdf {

inline constexpr char kMagic[4] = {'T', 'M', 'D', 'F'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;
inline constexpr std::size_t kMaxDims = 4;

namespace detail {

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <class T>
T get(const std::vector<std::uint8_t>& in, std::size_t& pos, const std::string& where) {
  if (pos + sizeof(T) > in.size()) throw FormatError(FormatError::Kind::Truncated, where + ": truncated header");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const Tensor& t) {
  if (t.ndim() < 1 || t.ndim() > kMaxDims) {
    throw FormatError(FormatError::Kind::InvalidShape, "tmdf: rank must be 1..4, got shape " + to_string(t.shape()));
  }
  std::vector<std::uint8_t> out;
  out.reserve(12 + 4 * t.ndim() + 4 * t.numel());
  out.insert(out.end(), kMagic, kMagic + 4);
  detail::put<std::uint32_t>(out, kVersion);
  detail::put<std::uint8_t>(out, kDtypeF32);
  detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(t.ndim()));
  detail::put<std::uint16_t>(out, 0);
  for (std::size_t d : t.shape()) {
    if (d == 0) throw FormatError(FormatError::Kind::InvalidShape, "tmdf: zero-size dimension in " + to_string(t.shape()));
    if (d > std::numeric_limits<std::uint32_t>::max())
      throw FormatError(FormatError::Kind::DimOverflow, "tmdf: dimension exceeds u32 in " + to_string(t.shape()));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  for (double v : t.data()) detail::put<float>(out, static_cast<float>(v));
  return out;
}

inline Tensor decode(const std::vector<std::uint8_t>& in, const std::string& where = "tmdf") {
  std::size_t pos = 0;
  if (in.size() < 4 || std::memcmp(in.data(), kMagic, 4) != 0)
    throw FormatError(FormatError::Kind::BadMagic, where + ": bad magic");
  pos = 4;
  const auto version = detail::get<std::uint32_t>(in, pos, where);
  if (version != kVersion)
    throw FormatError(FormatError::Kind::VersionMismatch, where + ": unsupported version " + std::to_string(version));
  const auto dtype = detail::get<std::uint8_t>(in, pos, where);
  if (dtype != kDtypeF32) throw FormatError(FormatError::Kind::BadDtype, where + ": unsupported dtype " + std::to_string(dtype));
  const auto ndim = detail::get<std::uint8_t>(in, pos, where);
  detail::get<std::uint16_t>(in, pos, where);
  if (ndim < 1 || ndim > kMaxDims)
    throw FormatError(FormatError::Kind::InvalidShape, where + ": rank " + std::to_string(ndim) + " outside 1..4");
  Shape shape;
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    const auto d = detail::get<std::uint32_t>(in, pos, where);
    if (d == 0) throw FormatError(FormatError::Kind::InvalidShape, where + ": zero-size dimension");
    if (count > std::numeric_limits<std::uint64_t>::max() / 4 / d)
      throw FormatError(FormatError::Kind::DimOverflow, where + ": element count overflows");
    count *= d;
    shape.push_back(d);
  }
  const std::size_t remaining = in.size() - pos;
  if (count * 4 > remaining) throw FormatError(FormatError::Kind::Truncated, where + ": payload truncated");
  if (count * 4 < remaining) throw FormatError(FormatError::Kind::TrailingData, where + ": trailing bytes after payload");
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    float f;
    std::memcpy(&f, in.data() + pos + 4 * i, 4);
    values[i] = static_cast<double>(f);
  }
  return Tensor(std::move(shape), std::move(values));
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError(FormatError::Kind::Io, "short write to " + path.string());
}

}  // namespace tmdf

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) { tmdf::write_bytes(path, tmdf::encode(t)); }

inline Tensor read_tensor(const std::filesystem::path& path) { return tmdf::decode(tmdf::read_bytes(path), path.string()); }

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Manifests
//
// {
//   "split": "train", "task_kind": "classification", "class_count": 2,
//   "samples": [{"id": ..., "audio_path": ..., "text_path": ...,
//                "video_path": ..., "label": ...}, ...]
// }
// Paths are relative to the manifest's directory.

inline std::string manifest_name(const std::string& split) { return split + ".json"; }

/// Writes one split: feature files under features/<split>/ and the manifest.
inline std::filesystem::path write_split(const std::filesystem::path& dir, const Dataset& d) {
  namespace fs = std::filesystem;
  nlohmann::ordered_json j;
  j["split"] = d.split;
  j["task_kind"] = to_string(d.task);
  j["class_count"] = d.num_classes;
  auto& samples = j["samples"];
  samples = nlohmann::ordered_json::array();
  const char* keys[] = {"audio_path", "text_path", "video_path"};
  for (const auto& s : d.samples) {
    nlohmann::ordered_json rec;
    rec["id"] = s.id;
    for (Modality m : kModalities) {
      const std::string rel = "features/" + d.split + "/" + s.id + "_" + letter(m) + ".tmdf";
      write_tensor(dir / rel, s.feature(m));
      rec[keys[index_of(m)]] = rel;
    }
    if (d.task == TaskKind::Classification) rec["label"] = static_cast<std::int64_t>(s.label);
    else rec["label"] = s.label;
    samples.push_back(std::move(rec));
  }
  const fs::path path = dir / manifest_name(d.split);
  fs::create_directories(dir);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
  f << j.dump(2) << '\n';
  return path;
}

/// Loads a manifest, checking that every referenced file exists.
inline Dataset read_split(const std::filesystem::path& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream f(manifest_path);
  if (!f) throw FormatError(FormatError::Kind::Io, "cannot open manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::Manifest, manifest_path.string() + ": " + e.what());
  }
  const fs::path base = manifest_path.parent_path();
  Dataset d;
  try {
    d.split = j.at("split").get<std::string>();
    d.task = parse_task(j.at("task_kind").get<std::string>());
    d.num_classes = j.at("class_count").get<std::size_t>();
    const char* keys[] = {"audio_path", "text_path", "video_path"};
    std::vector<std::string> missing;
    for (const auto& rec : j.at("samples")) {
      for (const char* k : keys) {
        const fs::path p = base / rec.at(k).get<std::string>();
        if (!fs::exists(p)) missing.push_back(p.string());
      }
    }
    if (!missing.empty()) {
      throw FormatError(FormatError::Kind::Manifest, manifest_path.string() + ": " + std::to_string(missing.size()) +
                                                         " referenced file(s) missing, first: " + missing.front());
    }
    for (const auto& rec : j.at("samples")) {
      ModalityBundle b;
      b.id = rec.at("id").get<std::string>();
      for (Modality m : kModalities) b.features[index_of(m)] = read_tensor(base / rec.at(keys[index_of(m)]).get<std::string>());
      b.label = rec.at("label").get<double>();
      for (auto& t : b.features) {
        if (t.ndim() == 1) t = Tensor({1, t.dim(0)}, std::vector<double>(t.data().begin(), t.data().end()));
      }
      d.samples.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::Manifest, manifest_path.string() + ": " + e.what());
  }
  d.validate();
  return d;
}

inline void write_dataset(const std::filesystem::path& dir, const SplitDataset& ds) {
  write_split(dir, ds.train);
  write_split(dir, ds.val);
  write_split(dir, ds.test);
}

inline SplitDataset read_dataset(const std::filesystem::path& dir) {
  SplitDataset ds;
  ds.train = read_split(dir / manifest_name("train"));
  ds.val = read_split(dir / manifest_name("val"));
  ds.test = read_split(dir / manifest_name("test"));
  return ds;
}

}  // namespace tmdc
