// REMI-style tokenization of piano performances.
//
// Each bar is emitted as
//   [Bar_start] (Position [Tempo] [Chord] (Pitch Duration Velocity)*)* [Bar_end]
// with Position only when it changes, Tempo/Chord only when their value
// changes, and simultaneous notes ordered by ascending pitch.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "covergen/core.h"

namespace covergen {

enum class TokenClass : std::uint8_t { kSpec, kBar, kPosition, kChord, kTempo, kPitch, kDuration, kVelocity };

enum class SpecToken : int { kPad = 0, kBos = 1, kEos = 2, kSs = 3, kUnk = 4 };
enum class BarToken : int { kStart = 0, kEnd = 1 };

struct Token {
  TokenClass cls = TokenClass::kSpec;
  int value = 0;
  bool operator==(const Token&) const = default;
};

const char* token_class_name(TokenClass cls);

// ---------------------------------------------------------------------------
// Chords: 12 chromatic roots x 11 qualities, plus NoChord.
// ---------------------------------------------------------------------------

inline constexpr int kChordRoots = 12;
inline constexpr int kChordQualities = 11;
inline constexpr int kNoChord = kChordRoots * kChordQualities;  // 132

/// Pitch-class intervals of each quality, indexed by quality.
const std::vector<int>& chord_quality_intervals(int quality);
const char* chord_quality_name(int quality);

/// "C:maj", "F#:min7", "N". Throws Error(kInvalidArgument) on unknown labels.
int parse_chord_label(std::string_view label);
std::string chord_label(int chord);

struct ChordEvent {
  double time = 0.0;
  int chord = kNoChord;
  bool operator==(const ChordEvent&) const = default;
};

/// Per-bar template matching over duration-weighted pitch-class profiles
/// (cosine score, ties to the lowest chord id). Emits an event only when the
/// best match changes; empty bars match NoChord.
std::vector<ChordEvent> extract_chords(const PianoPerformance& perf, const BeatGrid& grid);

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

struct VocabConfig {
  int positions_per_bar = kPositionsPerBar;
  int tempo_bins = 64;
  double tempo_min_bpm = 32.0;
  double tempo_max_bpm = 224.0;
  int velocity_bins = 32;
  int max_duration = 32;  // in sixteenth notes
  int min_pitch = kMinPitch;
  int max_pitch = kMaxPitch;
  bool operator==(const VocabConfig&) const = default;
};

class Vocabulary {
 public:
  /// Throws Error(kInvalidArgument) on an inconsistent configuration.
  explicit Vocabulary(const VocabConfig& config = {});

  const VocabConfig& config() const { return config_; }
  int size() const { return static_cast<int>(tokens_.size()); }

  int id(Token token) const;                      // throws for unknown tokens
  std::optional<int> find(Token token) const;
  const Token& token(int id) const;               // throws for out-of-range ids
  std::string name(int id) const;
  std::optional<int> find_name(std::string_view name) const;
  int count(TokenClass cls) const;
  /// [first, last) id range of a class.
  std::pair<int, int> class_range(TokenClass cls) const;

  int pad() const { return id({TokenClass::kSpec, static_cast<int>(SpecToken::kPad)}); }
  int bos() const { return id({TokenClass::kSpec, static_cast<int>(SpecToken::kBos)}); }
  int eos() const { return id({TokenClass::kSpec, static_cast<int>(SpecToken::kEos)}); }
  int ss() const { return id({TokenClass::kSpec, static_cast<int>(SpecToken::kSs)}); }
  int bar_start() const { return id({TokenClass::kBar, static_cast<int>(BarToken::kStart)}); }
  int bar_end() const { return id({TokenClass::kBar, static_cast<int>(BarToken::kEnd)}); }

  int tempo_bin(double bpm) const;
  double tempo_value(int bin) const;
  int velocity_bin(int velocity) const;
  int velocity_value(int bin) const;

 private:
  static std::uint32_t key(Token t) { return (static_cast<std::uint32_t>(t.cls) << 16) | static_cast<std::uint32_t>(t.value & 0xFFFF); }

  VocabConfig config_;
  std::vector<Token> tokens_;
  std::unordered_map<std::uint32_t, int> index_;
  std::array<std::pair<int, int>, 8> ranges_{};
};

// ---------------------------------------------------------------------------
// Token sequences
// ---------------------------------------------------------------------------

struct TokenSequence {
  std::vector<int> ids;
  /// Half-open [start, end) offsets; ids[start] is Bar_start, ids[end-1] Bar_end.
  std::vector<std::pair<std::size_t, std::size_t>> bar_spans;
  bool operator==(const TokenSequence&) const = default;
};

/// Throws Error(kParse) with the offending offset if bar spans are not
/// well-formed, ordered and non-overlapping.
void validate_structure(const TokenSequence& seq, const Vocabulary& vocab);

/// Recomputes bar spans from Bar_start/Bar_end markers in ids.
std::vector<std::pair<std::size_t, std::size_t>> scan_bar_spans(const std::vector<int>& ids,
                                                                const Vocabulary& vocab);

/// Encodes one bar per grid bar. Throws Error(kOutOfRange) for notes outside
/// the grid's bars, Error(kUnsupported) for non-4/4 grids.
TokenSequence encode(const PianoPerformance& perf, const BeatGrid& grid, const Vocabulary& vocab,
                     const std::optional<std::vector<ChordEvent>>& chords = std::nullopt);

/// Inverse of encode. Bars in the sequence map to grid bars in order.
/// Throws Error(kParse) with the token offset on malformed input.
PianoPerformance decode(const TokenSequence& seq, const BeatGrid& grid, const Vocabulary& vocab);

}  // namespace covergen
