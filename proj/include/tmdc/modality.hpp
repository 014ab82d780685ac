// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "tmdc/tensor.hpp"

namespace tmdc {

/// Model or data protocol violation (e.g. missing modality in a stage that
/// needs complete data, an empty availability pattern).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value; the message names the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class Modality : std::size_t { Audio = 0, Text = 1, Video = 2 };

inline constexpr std::array<Modality, 3> kModalities{Modality::Audio, Modality::Text, Modality::Video};
inline constexpr std::size_t kNumModalities = 3;

inline constexpr std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }

inline constexpr char letter(Modality m) {
  constexpr char letters[] = {'A', 'T', 'V'};
  return letters[index_of(m)];
}

/// Subset of {A, T, V}.
class ModalitySet {
 public:
  constexpr ModalitySet() = default;
  constexpr explicit ModalitySet(std::uint8_t bits) : bits_(bits & 0b111) {}

  static constexpr ModalitySet all() { return ModalitySet(0b111); }
  static constexpr ModalitySet none() { return ModalitySet(0); }
  static constexpr ModalitySet of(Modality m) { return ModalitySet(static_cast<std::uint8_t>(1u << index_of(m))); }

  /// Parses a comma list such as "A,T" (order and case ignored).
  static ModalitySet parse(std::string_view text) {
    std::uint8_t bits = 0;
    for (char c : text) {
      switch (c) {
        case 'A': case 'a': bits |= 1; break;
        case 'T': case 't': bits |= 2; break;
        case 'V': case 'v': bits |= 4; break;
        case ',': case ' ': break;
        default: throw ConfigError("pattern: unknown modality '" + std::string(1, c) + "' in \"" + std::string(text) + "\"");
      }
    }
    if (bits == 0) throw ConfigError("pattern: must name at least one of A, T, V");
    return ModalitySet(bits);
  }

  constexpr bool contains(Modality m) const { return (bits_ >> index_of(m)) & 1u; }
  constexpr std::size_t size() const { return (bits_ & 1u) + ((bits_ >> 1) & 1u) + ((bits_ >> 2) & 1u); }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr bool complete() const { return bits_ == 0b111; }
  constexpr std::uint8_t bits() const { return bits_; }

  ModalitySet with(Modality m) const { return ModalitySet(static_cast<std::uint8_t>(bits_ | (1u << index_of(m)))); }
  ModalitySet intersect(ModalitySet o) const { return ModalitySet(static_cast<std::uint8_t>(bits_ & o.bits_)); }

  /// Canonical comma form in A, T, V order ("A,T,V").
  std::string to_string() const {
    std::string s;
    for (Modality m : kModalities) {
      if (!contains(m)) continue;
      if (!s.empty()) s += ',';
      s += letter(m);
    }
    return s;
  }

  friend constexpr bool operator==(ModalitySet a, ModalitySet b) { return a.bits_ == b.bits_; }

 private:
  std::uint8_t bits_ = 0;
};

/// The seven evaluation patterns in reporting order: A, T, V, A+V, A+T, T+V, all.
inline std::array<ModalitySet, 7> all_patterns() {
  return {ModalitySet::parse("A"),   ModalitySet::parse("T"),   ModalitySet::parse("V"),
          ModalitySet::parse("A,V"), ModalitySet::parse("A,T"), ModalitySet::parse("T,V"),
          ModalitySet::all()};
}

/// Missing pattern plus additive-noise intensity.
struct Scenario {
  ModalitySet pattern = ModalitySet::all();
  double noise_sigma = 0.0;

  void validate() const {
    if (pattern.empty()) throw ProtocolError("scenario: empty availability pattern");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise-sigma: must be non-negative");
  }
};

inline constexpr std::array<double, 4> kNoiseGrid{0.0, 5.0, 10.0, 20.0};

enum class TaskKind { Regression, Classification };

inline std::string to_string(TaskKind t) { return t == TaskKind::Regression ? "regression" : "classification"; }

inline TaskKind parse_task(std::string_view s) {
  if (s == "regression") return TaskKind::Regression;
  if (s == "classification") return TaskKind::Classification;
  throw ConfigError("task kind: unknown value \"" + std::string(s) + "\"");
}

}  // namespace tmdc
