#include "covergen/remi.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "covergen/error.h"

namespace covergen {

const char* token_class_name(TokenClass cls) {
  switch (cls) {
    case TokenClass::kSpec: return "Spec";
    case TokenClass::kBar: return "Bar";
    case TokenClass::kPosition: return "Position";
    case TokenClass::kChord: return "Chord";
    case TokenClass::kTempo: return "Tempo";
    case TokenClass::kPitch: return "Pitch";
    case TokenClass::kDuration: return "Duration";
    case TokenClass::kVelocity: return "Velocity";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Chords
// ---------------------------------------------------------------------------

namespace {

const char* const kRootNames[kChordRoots] = {"C", "C#", "D", "D#", "E", "F",
                                             "F#", "G", "G#", "A", "A#", "B"};
const char* const kQualityNames[kChordQualities] = {"maj", "min", "dim", "aug", "7", "maj7",
                                                    "min7", "min7b5", "sus2", "sus4", "5"};
const char* const kSpecNames[] = {"pad", "bos", "eos", "ss", "unk"};

}  // namespace

const std::vector<int>& chord_quality_intervals(int quality) {
  static const std::vector<int> kIntervals[kChordQualities] = {
      {0, 4, 7}, {0, 3, 7},     {0, 3, 6},     {0, 4, 8},     {0, 4, 7, 10}, {0, 4, 7, 11},
      {0, 3, 7, 10}, {0, 3, 6, 10}, {0, 2, 7}, {0, 5, 7}, {0, 7}};
  if (quality < 0 || quality >= kChordQualities) {
    throw Error(ErrorCode::kOutOfRange, "chord quality out of range");
  }
  return kIntervals[quality];
}

const char* chord_quality_name(int quality) {
  if (quality < 0 || quality >= kChordQualities) {
    throw Error(ErrorCode::kOutOfRange, "chord quality out of range");
  }
  return kQualityNames[quality];
}

int parse_chord_label(std::string_view label) {
  if (label == "N") return kNoChord;
  const auto colon = label.find(':');
  if (colon == std::string_view::npos || colon == 0) {
    throw Error(ErrorCode::kInvalidArgument, "unknown chord label '" + std::string(label) + "'");
  }
  const std::string_view root_name = label.substr(0, colon);
  const std::string_view quality_name = label.substr(colon + 1);
  static const std::map<char, int> kNatural = {{'C', 0}, {'D', 2}, {'E', 4}, {'F', 5},
                                               {'G', 7}, {'A', 9}, {'B', 11}};
  const auto nat = kNatural.find(root_name[0]);
  if (nat == kNatural.end() || root_name.size() > 2) {
    throw Error(ErrorCode::kInvalidArgument, "unknown chord root in '" + std::string(label) + "'");
  }
  int root = nat->second;
  if (root_name.size() == 2) {
    if (root_name[1] == '#') {
      root += 1;
    } else if (root_name[1] == 'b') {
      root += 11;
    } else {
      throw Error(ErrorCode::kInvalidArgument, "unknown chord root in '" + std::string(label) + "'");
    }
  }
  root %= 12;
  for (int q = 0; q < kChordQualities; ++q) {
    if (quality_name == kQualityNames[q]) return root * kChordQualities + q;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown chord quality in '" + std::string(label) + "'");
}

std::string chord_label(int chord) {
  if (chord == kNoChord) return "N";
  if (chord < 0 || chord > kNoChord) throw Error(ErrorCode::kOutOfRange, "chord id out of range");
  return std::string(kRootNames[chord / kChordQualities]) + ":" + kQualityNames[chord % kChordQualities];
}

std::vector<ChordEvent> extract_chords(const PianoPerformance& perf, const BeatGrid& grid) {
  require_four_four(grid);
  std::vector<ChordEvent> events;
  int current = -1;
  for (const Bar& bar : bars_from_grid(grid)) {
    const double t0 = grid.time_at(bar.start_beat);
    const double t1 = grid.time_at(bar.end_beat);
    std::array<double, 12> profile{};
    for (const auto& n : perf.notes) {
      const double overlap = std::min(n.offset(), t1) - std::max(n.onset, t0);
      if (overlap > 0.0) profile[static_cast<std::size_t>(n.pitch % 12)] += overlap;
    }
    double norm = 0.0;
    for (double v : profile) norm += v * v;
    int best = kNoChord;
    if (norm > 0.0) {
      double best_score = -1.0;
      for (int c = 0; c < kNoChord; ++c) {
        const int root = c / kChordQualities;
        const auto& iv = chord_quality_intervals(c % kChordQualities);
        double dot = 0.0;
        for (int i : iv) dot += profile[static_cast<std::size_t>((root + i) % 12)];
        const double score = dot / std::sqrt(norm * static_cast<double>(iv.size()));
        if (score > best_score + 1e-12) {
          best_score = score;
          best = c;
        }
      }
    }
    if (best != current) {
      events.push_back({t0, best});
      current = best;
    }
  }
  return events;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

Vocabulary::Vocabulary(const VocabConfig& config) : config_(config) {
  if (config.positions_per_bar <= 0 || config.tempo_bins <= 0 || config.velocity_bins <= 0 ||
      config.max_duration <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "vocabulary config needs at least one bin per class");
  }
  if (!(config.tempo_min_bpm > 0.0) || !(config.tempo_max_bpm > config.tempo_min_bpm)) {
    throw Error(ErrorCode::kInvalidArgument, "tempo range must satisfy 0 < min < max");
  }
  if (config.min_pitch < 0 || config.max_pitch > 127 || config.min_pitch > config.max_pitch) {
    throw Error(ErrorCode::kInvalidArgument, "pitch range invalid");
  }
  if (config.velocity_bins > 127) throw Error(ErrorCode::kInvalidArgument, "more velocity bins than velocities");

  auto add_class = [&](TokenClass cls, int first, int last) {
    const int begin = static_cast<int>(tokens_.size());
    for (int v = first; v <= last; ++v) {
      index_[key({cls, v})] = static_cast<int>(tokens_.size());
      tokens_.push_back({cls, v});
    }
    ranges_[static_cast<std::size_t>(cls)] = {begin, static_cast<int>(tokens_.size())};
  };
  add_class(TokenClass::kSpec, 0, 4);
  add_class(TokenClass::kBar, 0, 1);
  add_class(TokenClass::kPosition, 0, config.positions_per_bar - 1);
  add_class(TokenClass::kChord, 0, kNoChord);
  add_class(TokenClass::kTempo, 0, config.tempo_bins - 1);
  add_class(TokenClass::kPitch, config.min_pitch, config.max_pitch);
  add_class(TokenClass::kDuration, 1, config.max_duration);
  add_class(TokenClass::kVelocity, 0, config.velocity_bins - 1);
}

std::optional<int> Vocabulary::find(Token token) const {
  const auto it = index_.find(key(token));
  if (it == index_.end() || tokens_[static_cast<std::size_t>(it->second)] != token) return std::nullopt;
  return it->second;
}

int Vocabulary::id(Token token) const {
  if (auto found = find(token)) return *found;
  throw Error(ErrorCode::kOutOfRange, std::string("token ") + token_class_name(token.cls) + "_" +
                                          std::to_string(token.value) + " not in vocabulary");
}

const Token& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw Error(ErrorCode::kOutOfRange, "token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::name(int id) const {
  const Token& t = token(id);
  switch (t.cls) {
    case TokenClass::kSpec: return std::string("Spec_") + kSpecNames[t.value];
    case TokenClass::kBar: return t.value == 0 ? "Bar_start" : "Bar_end";
    case TokenClass::kChord: return "Chord_" + chord_label(t.value);
    default: return std::string(token_class_name(t.cls)) + "_" + std::to_string(t.value);
  }
}

std::optional<int> Vocabulary::find_name(std::string_view name) const {
  for (int i = 0; i < size(); ++i) {
    if (this->name(i) == name) return i;
  }
  return std::nullopt;
}

int Vocabulary::count(TokenClass cls) const {
  const auto [a, b] = class_range(cls);
  return b - a;
}

std::pair<int, int> Vocabulary::class_range(TokenClass cls) const {
  return ranges_[static_cast<std::size_t>(cls)];
}

int Vocabulary::tempo_bin(double bpm) const {
  const double span = std::log(config_.tempo_max_bpm / config_.tempo_min_bpm);
  const double x = std::log(bpm / config_.tempo_min_bpm) / span * config_.tempo_bins;
  return std::clamp(static_cast<int>(std::floor(x)), 0, config_.tempo_bins - 1);
}

double Vocabulary::tempo_value(int bin) const {
  const double span = std::log(config_.tempo_max_bpm / config_.tempo_min_bpm);
  return config_.tempo_min_bpm * std::exp((bin + 0.5) * span / config_.tempo_bins);
}

int Vocabulary::velocity_bin(int velocity) const {
  const int b = (std::clamp(velocity, 1, 127) - 1) * config_.velocity_bins / 127;
  return std::clamp(b, 0, config_.velocity_bins - 1);
}

int Vocabulary::velocity_value(int bin) const {
  const double width = 127.0 / config_.velocity_bins;
  return std::clamp(static_cast<int>(std::lround(1.0 + (bin + 0.5) * width)), 1, 127);
}

// ---------------------------------------------------------------------------
// Sequences
// ---------------------------------------------------------------------------

std::vector<std::pair<std::size_t, std::size_t>> scan_bar_spans(const std::vector<int>& ids,
                                                                const Vocabulary& vocab) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::optional<std::size_t> open;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == vocab.bar_start()) {
      if (open) throw Error(ErrorCode::kParse, "Bar_start inside an open bar at offset " + std::to_string(i), i);
      open = i;
    } else if (ids[i] == vocab.bar_end()) {
      if (!open) throw Error(ErrorCode::kParse, "Bar_end without Bar_start at offset " + std::to_string(i), i);
      spans.emplace_back(*open, i + 1);
      open.reset();
    }
  }
  if (open) {
    throw Error(ErrorCode::kParse, "bar opened at offset " + std::to_string(*open) + " has no Bar_end", ids.size());
  }
  return spans;
}

void validate_structure(const TokenSequence& seq, const Vocabulary& vocab) {
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (seq.ids[i] < 0 || seq.ids[i] >= vocab.size()) {
      throw Error(ErrorCode::kParse, "token id out of range at offset " + std::to_string(i), i);
    }
  }
  const auto spans = scan_bar_spans(seq.ids, vocab);
  if (spans != seq.bar_spans) {
    throw Error(ErrorCode::kParse, "bar_spans disagree with Bar_start/Bar_end markers");
  }
}

namespace {

struct NoteSlot {
  int position;
  int pitch;
  int duration;
  int velocity_bin;
};

struct BarEvents {
  std::map<int, int> tempo;  // position -> bin (last event at a position wins)
  std::map<int, int> chord;  // position -> chord id
  std::vector<NoteSlot> notes;
};

}  // namespace

TokenSequence encode(const PianoPerformance& perf, const BeatGrid& grid, const Vocabulary& vocab,
                     const std::optional<std::vector<ChordEvent>>& chords) {
  validate(perf);
  require_four_four(grid);
  const int spb = vocab.config().positions_per_bar / kBeatsPerBar;
  if (spb * kBeatsPerBar != vocab.config().positions_per_bar) {
    throw Error(ErrorCode::kInvalidArgument, "positions_per_bar must be a multiple of 4");
  }
  const std::vector<Bar> bars = bars_from_grid(grid);
  const long long first_sub = static_cast<long long>(bars.front().start_beat) * spb;
  const long long end_sub = static_cast<long long>(bars.back().end_beat) * spb;

  auto locate = [&](long long g) -> std::pair<int, int> {
    const int bar = bar_of_beat(grid, static_cast<int>(g / spb));
    const Bar& b = bars[static_cast<std::size_t>(bar)];
    return {bar, static_cast<int>(g - static_cast<long long>(b.start_beat) * spb)};
  };
  // Timed events before the first bar clamp to its start, after the end to the last slot.
  auto clamp_sub = [&](long long g) { return std::clamp(g, first_sub, end_sub - 1); };

  std::vector<BarEvents> per_bar(bars.size());
  for (const auto& t : perf.tempo_events) {
    const auto [bar, pos] = locate(clamp_sub(nearest_subdivision(t.time, grid, spb)));
    per_bar[static_cast<std::size_t>(bar)].tempo[pos] = vocab.tempo_bin(t.bpm);
  }
  if (chords) {
    for (const auto& c : *chords) {
      if (c.chord < 0 || c.chord > kNoChord) throw Error(ErrorCode::kInvalidArgument, "unknown chord id");
      const auto [bar, pos] = locate(clamp_sub(nearest_subdivision(c.time, grid, spb)));
      per_bar[static_cast<std::size_t>(bar)].chord[pos] = c.chord;
    }
  }
  for (const auto& n : perf.notes) {
    const long long on = nearest_subdivision(n.onset, grid, spb);
    if (on < first_sub || on >= end_sub) {
      throw Error(ErrorCode::kOutOfRange,
                  "note at " + std::to_string(n.onset) + " s lies outside the grid's bars");
    }
    const long long off = nearest_subdivision(n.offset(), grid, spb);
    const int dur = static_cast<int>(std::clamp<long long>(off - on, 1, vocab.config().max_duration));
    const auto [bar, pos] = locate(on);
    per_bar[static_cast<std::size_t>(bar)].notes.push_back({pos, n.pitch, dur, vocab.velocity_bin(n.velocity)});
  }

  TokenSequence seq;
  int tempo_state = -1;
  int chord_state = -1;
  for (auto& ev : per_bar) {
    const std::size_t start = seq.ids.size();
    seq.ids.push_back(vocab.bar_start());
    std::sort(ev.notes.begin(), ev.notes.end(), [](const NoteSlot& a, const NoteSlot& b) {
      if (a.position != b.position) return a.position < b.position;
      if (a.pitch != b.pitch) return a.pitch < b.pitch;
      if (a.duration != b.duration) return a.duration < b.duration;
      return a.velocity_bin < b.velocity_bin;
    });
    std::vector<int> positions;
    for (const auto& [p, _] : ev.tempo) positions.push_back(p);
    for (const auto& [p, _] : ev.chord) positions.push_back(p);
    for (const auto& n : ev.notes) positions.push_back(n.position);
    std::sort(positions.begin(), positions.end());
    positions.erase(std::unique(positions.begin(), positions.end()), positions.end());

    std::size_t note_i = 0;
    for (int p : positions) {
      std::vector<int> out;
      if (auto it = ev.tempo.find(p); it != ev.tempo.end() && it->second != tempo_state) {
        out.push_back(vocab.id({TokenClass::kTempo, it->second}));
        tempo_state = it->second;
      }
      if (auto it = ev.chord.find(p); it != ev.chord.end() && it->second != chord_state) {
        out.push_back(vocab.id({TokenClass::kChord, it->second}));
        chord_state = it->second;
      }
      for (; note_i < ev.notes.size() && ev.notes[note_i].position == p; ++note_i) {
        const auto& n = ev.notes[note_i];
        out.push_back(vocab.id({TokenClass::kPitch, n.pitch}));
        out.push_back(vocab.id({TokenClass::kDuration, n.duration}));
        out.push_back(vocab.id({TokenClass::kVelocity, n.velocity_bin}));
      }
      if (out.empty()) continue;  // redundant tempo/chord change
      seq.ids.push_back(vocab.id({TokenClass::kPosition, p}));
      seq.ids.insert(seq.ids.end(), out.begin(), out.end());
    }
    seq.ids.push_back(vocab.bar_end());
    seq.bar_spans.emplace_back(start, seq.ids.size());
  }
  return seq;
}

PianoPerformance decode(const TokenSequence& seq, const BeatGrid& grid, const Vocabulary& vocab) {
  require_four_four(grid);
  const int spb = vocab.config().positions_per_bar / kBeatsPerBar;
  const std::vector<Bar> bars = bars_from_grid(grid);

  auto fail = [](std::size_t at, const std::string& what) -> Error {
    return Error(ErrorCode::kParse, what + " at offset " + std::to_string(at), at);
  };

  std::vector<NoteEvent> notes;
  std::vector<TempoEvent> tempos;
  int bar = -1;
  bool in_bar = false;
  int position = 0;
  std::size_t bar_open_at = 0;
  double end_time = 0.0;
  const std::size_t n = seq.ids.size();
  for (std::size_t i = 0; i < n; ++i) {
    const int id = seq.ids[i];
    if (id < 0 || id >= vocab.size()) throw fail(i, "token id out of range");
    const Token tok = vocab.token(id);
    if (!in_bar) {
      if (tok.cls == TokenClass::kSpec) continue;
      if (id != vocab.bar_start()) throw fail(i, "token outside a bar");
      ++bar;
      if (bar >= static_cast<int>(bars.size())) throw fail(i, "more bars than the grid provides");
      in_bar = true;
      position = 0;
      bar_open_at = i;
      continue;
    }
    const long long bar_sub = static_cast<long long>(bars[static_cast<std::size_t>(bar)].start_beat) * spb;
    switch (tok.cls) {
      case TokenClass::kBar:
        if (id == vocab.bar_start()) throw fail(i, "Bar_start inside an open bar");
        in_bar = false;
        end_time = std::max(end_time, grid.time_at(bars[static_cast<std::size_t>(bar)].end_beat));
        break;
      case TokenClass::kPosition:
        position = tok.value;
        break;
      case TokenClass::kTempo:
        tempos.push_back({grid.subdivision_time(bar_sub + position, spb), vocab.tempo_value(tok.value)});
        break;
      case TokenClass::kChord:
        break;
      case TokenClass::kPitch: {
        if (i + 1 >= n || vocab.token(seq.ids[i + 1]).cls != TokenClass::kDuration) {
          throw fail(i + 1, "Pitch not followed by Duration");
        }
        if (i + 2 >= n || vocab.token(seq.ids[i + 2]).cls != TokenClass::kVelocity) {
          throw fail(i + 2, "Duration not followed by Velocity");
        }
        const int dur = vocab.token(seq.ids[i + 1]).value;
        const int vel = vocab.velocity_value(vocab.token(seq.ids[i + 2]).value);
        const long long on = bar_sub + position;
        const double t0 = grid.subdivision_time(on, spb);
        const double t1 = grid.subdivision_time(on + dur, spb);
        notes.push_back({tok.value, t0, t1 - t0, vel});
        i += 2;
        break;
      }
      case TokenClass::kDuration:
      case TokenClass::kVelocity:
        throw fail(i, "Duration/Velocity without a preceding Pitch");
      case TokenClass::kSpec:
        throw fail(i, "special token inside a bar");
    }
  }
  if (in_bar) throw fail(n, "bar opened at offset " + std::to_string(bar_open_at) + " has no Bar_end");
  return PianoPerformance::make(std::move(notes), std::move(tempos), end_time);
}

}  // namespace covergen
