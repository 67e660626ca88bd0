// Domain types and beat-grid arithmetic.
//
// All times are seconds as double. Meter is fixed at 4/4 with four
// subdivisions per beat, giving 16 sixteenth-note positions per bar.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace covergen {

inline constexpr int kMinPitch = 21;   // A0
inline constexpr int kMaxPitch = 108;  // C8
inline constexpr int kBeatsPerBar = 4;
inline constexpr int kSubdivisionsPerBeat = 4;
inline constexpr int kPositionsPerBar = kBeatsPerBar * kSubdivisionsPerBeat;

struct NoteEvent {
  int pitch = 60;
  double onset = 0.0;
  double duration = 0.0;
  int velocity = 64;

  double offset() const { return onset + duration; }
  bool operator==(const NoteEvent&) const = default;
};

/// Throws Error(kInvalidArgument) when the note violates its invariants.
void validate(const NoteEvent& note);

struct TempoEvent {
  double time = 0.0;
  double bpm = 120.0;
  bool operator==(const TempoEvent&) const = default;
};

struct PianoPerformance {
  std::vector<NoteEvent> notes;
  std::vector<TempoEvent> tempo_events;
  double length = 0.0;

  /// Builds a performance, sorting notes by (onset, pitch) and extending
  /// length to cover every onset. Validates every note.
  static PianoPerformance make(std::vector<NoteEvent> notes,
                               std::vector<TempoEvent> tempo_events,
                               double length);

  /// Latest note offset (0 for an empty performance).
  double end_time() const;
};

void validate(const PianoPerformance& perf);

/// Ordered beat times with downbeat indices.
class BeatGrid {
 public:
  BeatGrid() = default;
  /// Throws if beats are not strictly increasing or downbeats are invalid.
  BeatGrid(std::vector<double> beat_times, std::vector<int> downbeat_indices);

  const std::vector<double>& beat_times() const { return beats_; }
  const std::vector<int>& downbeat_indices() const { return downbeats_; }
  int count() const { return static_cast<int>(beats_.size()); }
  bool empty() const { return beats_.empty(); }

  /// Time of a (possibly fractional) beat position. Positions outside
  /// [0, count-1] are extrapolated from the nearest inter-beat interval.
  double time_at(double beat_position) const;

  /// Time of global subdivision index g (g = beat * subdivisions + sub).
  double subdivision_time(long long g, int subdivisions = kSubdivisionsPerBeat) const;

  /// Fractional beat position of time t (inverse of time_at, extrapolating).
  double beat_position(double t) const;

  /// True when every pair of consecutive downbeats is exactly four beats apart.
  bool is_four_four() const;

  bool operator==(const BeatGrid&) const = default;

 private:
  std::vector<double> beats_;
  std::vector<int> downbeats_;
};

struct Bar {
  int index = 0;
  int start_beat = 0;  // inclusive
  int end_beat = 0;    // exclusive; equals the next bar's start_beat
  bool operator==(const Bar&) const = default;
};

/// Bars implied by a 4/4 grid: one per downbeat, ending at the next
/// downbeat. The final bar ends four beats after its downbeat, which may be
/// past the last annotated beat (an open bar).
std::vector<Bar> bars_from_grid(const BeatGrid& grid);

/// Throws Error(kUnsupported) unless the grid is 4/4 with at least one downbeat.
void require_four_four(const BeatGrid& grid);

/// Integrates a piecewise-constant tempo map. Beats are generated at every
/// time t < length; downbeats fall every beats_per_bar beats from beat 0.
BeatGrid build_beat_grid_from_tempo(std::span<const TempoEvent> tempo_events,
                                    double length, int beats_per_bar = kBeatsPerBar);

struct GridPosition {
  int bar = 0;
  int position = 0;          // subdivision within the bar
  long long subdivision = 0; // global subdivision index on the grid
  bool clamped = false;      // t fell outside [first beat, last beat]
};

/// Snaps t to the nearest subdivision of the grid; exact ties go to the
/// earlier position. Out-of-span times are clamped and flagged.
GridPosition quantize_time(double t, const BeatGrid& grid,
                           int subdivisions = kSubdivisionsPerBeat);

/// Snaps t to the nearest subdivision, extrapolating past the grid ends
/// instead of clamping. Ties go to the earlier position.
long long nearest_subdivision(double t, const BeatGrid& grid,
                              int subdivisions = kSubdivisionsPerBeat);

/// Bar index containing a beat, or -1 when the beat precedes the first downbeat.
int bar_of_beat(const BeatGrid& grid, int beat);

}  // namespace covergen
