// Synthetic song/cover fixtures with known warps.

#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "covergen/alignment.h"
#include "covergen/core.h"
#include "covergen/features.h"
#include "covergen/metrics.h"

namespace covergen {

struct SynthOptions {
  int bars = 4;
  double bpm = 120.0;
  /// Song beat period / piano beat period (1.1 = song 10% slower).
  double warp = 1.0;
  /// Piano bars that the warp collapses onto a single song instant.
  std::set<int> flat_bars;
  int sample_rate = 22050;
  bool render_audio = true;
};

struct SynthPiece {
  std::string id;
  PianoPerformance piano;
  BeatGrid piano_grid;
  TimeMap warp;                 // piano seconds -> song seconds
  BeatGrid song_grid;
  PianoPerformance song_notes;  // piano notes moved onto the song timeline
  PcmBuffer song_audio;         // empty unless render_audio
  MelodyContour reference;      // skyline of song_notes at 100 frames/s
  std::set<int> flat_bars;
};

/// One chord per bar (distinct roots within a piece) with a bass note, a
/// triad and a four-note melody, every note on the sixteenth grid.
/// The piano grid has bars + 1 downbeats so every note-bearing bar is closed.
SynthPiece synth_piece(const std::string& id, const SynthOptions& options, std::uint64_t seed);

/// Additive sine rendering (three partials, exponential decay), peak
/// normalized to 0.8.
PcmBuffer render_notes(const PianoPerformance& notes, int sample_rate, double length);

}  // namespace covergen
