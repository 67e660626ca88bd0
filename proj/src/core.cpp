#include "covergen/core.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "covergen/error.h"

namespace covergen {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kParse: return "parse_error";
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kUnsupported: return "unsupported";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kInfeasible: return "infeasible";
    case ErrorCode::kState: return "invalid_state";
  }
  return "unknown";
}

void validate(const NoteEvent& note) {
  if (note.pitch < kMinPitch || note.pitch > kMaxPitch) {
    throw Error(ErrorCode::kInvalidArgument,
                "note pitch " + std::to_string(note.pitch) + " outside 21..108");
  }
  if (!(note.duration > 0.0) || !std::isfinite(note.duration)) {
    throw Error(ErrorCode::kInvalidArgument, "note duration must be positive");
  }
  if (!std::isfinite(note.onset) || note.onset < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "note onset must be finite and >= 0");
  }
  if (note.velocity < 1 || note.velocity > 127) {
    throw Error(ErrorCode::kInvalidArgument,
                "velocity " + std::to_string(note.velocity) + " outside 1..127");
  }
}

static bool note_less(const NoteEvent& a, const NoteEvent& b) {
  if (a.onset != b.onset) return a.onset < b.onset;
  if (a.pitch != b.pitch) return a.pitch < b.pitch;
  if (a.duration != b.duration) return a.duration < b.duration;
  return a.velocity < b.velocity;
}

PianoPerformance PianoPerformance::make(std::vector<NoteEvent> notes,
                                        std::vector<TempoEvent> tempo_events,
                                        double length) {
  for (const auto& n : notes) validate(n);
  std::sort(notes.begin(), notes.end(), note_less);
  std::stable_sort(tempo_events.begin(), tempo_events.end(),
                   [](const TempoEvent& a, const TempoEvent& b) { return a.time < b.time; });
  for (const auto& t : tempo_events) {
    if (!(t.bpm > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tempo must be positive");
  }
  PianoPerformance perf;
  perf.notes = std::move(notes);
  perf.tempo_events = std::move(tempo_events);
  perf.length = std::max(length, perf.end_time());
  return perf;
}

double PianoPerformance::end_time() const {
  double end = 0.0;
  for (const auto& n : notes) end = std::max(end, n.offset());
  return end;
}

void validate(const PianoPerformance& perf) {
  for (std::size_t i = 0; i < perf.notes.size(); ++i) {
    validate(perf.notes[i]);
    if (i > 0 && note_less(perf.notes[i], perf.notes[i - 1])) {
      throw Error(ErrorCode::kInvalidArgument, "notes not sorted by onset, pitch");
    }
    if (perf.notes[i].onset > perf.length) {
      throw Error(ErrorCode::kInvalidArgument, "note onset beyond performance length");
    }
  }
  for (std::size_t i = 0; i < perf.tempo_events.size(); ++i) {
    if (!(perf.tempo_events[i].bpm > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "tempo must be positive");
    }
    if (i > 0 && perf.tempo_events[i].time < perf.tempo_events[i - 1].time) {
      throw Error(ErrorCode::kInvalidArgument, "tempo events not sorted");
    }
  }
}

BeatGrid::BeatGrid(std::vector<double> beat_times, std::vector<int> downbeat_indices)
    : beats_(std::move(beat_times)), downbeats_(std::move(downbeat_indices)) {
  for (std::size_t i = 0; i < beats_.size(); ++i) {
    if (!std::isfinite(beats_[i])) throw Error(ErrorCode::kInvalidArgument, "non-finite beat time");
    if (i > 0 && !(beats_[i] > beats_[i - 1])) {
      throw Error(ErrorCode::kInvalidArgument, "beat times must be strictly increasing");
    }
  }
  for (std::size_t i = 0; i < downbeats_.size(); ++i) {
    if (downbeats_[i] < 0 || downbeats_[i] >= count()) {
      throw Error(ErrorCode::kInvalidArgument, "downbeat index out of range");
    }
    if (i > 0 && downbeats_[i] <= downbeats_[i - 1]) {
      throw Error(ErrorCode::kInvalidArgument, "downbeat indices must be strictly increasing");
    }
  }
}

double BeatGrid::time_at(double pos) const {
  const int n = count();
  if (n == 0) throw Error(ErrorCode::kState, "empty beat grid");
  if (n == 1) return beats_[0] + pos * 0.5;  // no interval known; assume 120 BPM
  if (pos <= 0.0) return beats_[0] + pos * (beats_[1] - beats_[0]);
  if (pos >= n - 1) return beats_[n - 1] + (pos - (n - 1)) * (beats_[n - 1] - beats_[n - 2]);
  const int i = static_cast<int>(std::floor(pos));
  const double frac = pos - i;
  return beats_[i] + frac * (beats_[i + 1] - beats_[i]);
}

double BeatGrid::subdivision_time(long long g, int subdivisions) const {
  const long long beat = g >= 0 ? g / subdivisions : -((-g + subdivisions - 1) / subdivisions);
  const long long sub = g - beat * subdivisions;
  const int n = count();
  if (n == 0) throw Error(ErrorCode::kState, "empty beat grid");
  if (sub == 0 && beat >= 0 && beat < n) return beats_[static_cast<std::size_t>(beat)];
  if (beat >= 0 && beat + 1 < n) {
    const double a = beats_[static_cast<std::size_t>(beat)];
    const double b = beats_[static_cast<std::size_t>(beat + 1)];
    return a + (b - a) * static_cast<double>(sub) / subdivisions;
  }
  return time_at(static_cast<double>(g) / subdivisions);
}

double BeatGrid::beat_position(double t) const {
  const int n = count();
  if (n == 0) throw Error(ErrorCode::kState, "empty beat grid");
  if (n == 1) return (t - beats_[0]) / 0.5;
  if (t <= beats_[0]) return (t - beats_[0]) / (beats_[1] - beats_[0]);
  if (t >= beats_[n - 1]) return (n - 1) + (t - beats_[n - 1]) / (beats_[n - 1] - beats_[n - 2]);
  const auto it = std::upper_bound(beats_.begin(), beats_.end(), t);
  const int i = static_cast<int>(it - beats_.begin()) - 1;
  return i + (t - beats_[i]) / (beats_[i + 1] - beats_[i]);
}

bool BeatGrid::is_four_four() const {
  for (std::size_t i = 1; i < downbeats_.size(); ++i) {
    if (downbeats_[i] - downbeats_[i - 1] != kBeatsPerBar) return false;
  }
  return true;
}

std::vector<Bar> bars_from_grid(const BeatGrid& grid) {
  std::vector<Bar> bars;
  const auto& db = grid.downbeat_indices();
  for (std::size_t k = 0; k < db.size(); ++k) {
    Bar bar;
    bar.index = static_cast<int>(k);
    bar.start_beat = db[k];
    bar.end_beat = k + 1 < db.size() ? db[k + 1] : db[k] + kBeatsPerBar;
    bars.push_back(bar);
  }
  return bars;
}

void require_four_four(const BeatGrid& grid) {
  if (grid.downbeat_indices().empty()) {
    throw Error(ErrorCode::kUnsupported, "beat grid has no downbeats");
  }
  if (!grid.is_four_four()) {
    throw Error(ErrorCode::kUnsupported, "only 4/4 meter is supported");
  }
}

BeatGrid build_beat_grid_from_tempo(std::span<const TempoEvent> tempo_events, double length,
                                    int beats_per_bar) {
  if (tempo_events.empty()) throw Error(ErrorCode::kInvalidArgument, "empty tempo list");
  if (!(length > 0.0)) throw Error(ErrorCode::kInvalidArgument, "length must be positive");
  if (beats_per_bar <= 0) throw Error(ErrorCode::kInvalidArgument, "beats_per_bar must be positive");
  for (std::size_t i = 0; i < tempo_events.size(); ++i) {
    if (!(tempo_events[i].bpm > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tempo must be positive");
    if (i > 0 && tempo_events[i].time < tempo_events[i - 1].time) {
      throw Error(ErrorCode::kInvalidArgument, "tempo events not sorted");
    }
  }
  // Walk segments of constant tempo. The first tempo applies from t = 0.
  std::vector<double> beats;
  double t = 0.0;
  std::size_t seg = 0;
  // Fraction of a beat already elapsed at the current segment start.
  double phase = 0.0;
  while (true) {
    const double bpm = tempo_events[seg].bpm;
    const double period = 60.0 / bpm;
    const double seg_end =
        seg + 1 < tempo_events.size() ? tempo_events[seg + 1].time : length;
    // Next beat time within this segment.
    double next = t + (1.0 - phase) * period;
    if (phase == 0.0) next = t;
    while (next < seg_end - 1e-12 && next < length) {
      beats.push_back(next);
      next += period;
    }
    if (seg + 1 >= tempo_events.size() || seg_end >= length) break;
    // Beat fraction reached at the segment boundary.
    const double last = beats.empty() ? t : beats.back();
    phase = (seg_end - last) / period;
    if (beats.empty()) phase = 0.0;
    if (phase >= 1.0) phase = 0.0;
    t = seg_end;
    ++seg;
  }
  std::vector<int> downbeats;
  for (int i = 0; i < static_cast<int>(beats.size()); i += beats_per_bar) downbeats.push_back(i);
  return BeatGrid(std::move(beats), std::move(downbeats));
}

long long nearest_subdivision(double t, const BeatGrid& grid, int subdivisions) {
  if (subdivisions <= 0) throw Error(ErrorCode::kInvalidArgument, "subdivisions must be positive");
  const double pos = grid.beat_position(t) * subdivisions;
  long long lo = static_cast<long long>(std::floor(pos));
  // beat_position can be off by an ulp; consider neighbours and pick by time.
  long long best = lo - 1;
  double best_d = std::abs(t - grid.subdivision_time(best, subdivisions));
  for (long long g = lo; g <= lo + 2; ++g) {
    const double d = std::abs(t - grid.subdivision_time(g, subdivisions));
    if (d < best_d) {
      best = g;
      best_d = d;
    }
  }
  return best;
}

int bar_of_beat(const BeatGrid& grid, int beat) {
  const auto& db = grid.downbeat_indices();
  const auto it = std::upper_bound(db.begin(), db.end(), beat);
  if (it == db.begin()) return -1;
  return static_cast<int>(it - db.begin()) - 1;
}

GridPosition quantize_time(double t, const BeatGrid& grid, int subdivisions) {
  if (grid.empty()) throw Error(ErrorCode::kInvalidArgument, "empty beat grid");
  GridPosition out;
  const double first = grid.beat_times().front();
  const double last = grid.beat_times().back();
  if (t < first) {
    t = first;
    out.clamped = true;
  } else if (t > last) {
    t = last;
    out.clamped = true;
  }
  out.subdivision = nearest_subdivision(t, grid, subdivisions);
  const int beat = static_cast<int>(out.subdivision / subdivisions);
  out.bar = bar_of_beat(grid, beat);
  if (out.bar >= 0) {
    out.position = static_cast<int>(
        out.subdivision -
        static_cast<long long>(grid.downbeat_indices()[static_cast<std::size_t>(out.bar)]) * subdivisions);
  } else {
    out.position = static_cast<int>(out.subdivision);
  }
  return out;
}

}  // namespace covergen
