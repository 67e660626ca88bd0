// Objective evaluation: skyline melody, melody chroma accuracy (MCA),
// 4-bar pitch-class entropy (H4) and next-bar grooving similarity (GS).

#pragma once

#include <array>
#include <optional>
#include <vector>

#include "covergen/core.h"

namespace covergen {

struct MelodyContour {
  std::vector<std::optional<double>> pitches;  // MIDI pitch, nullopt = unvoiced
  double frame_rate = 100.0;
  bool operator==(const MelodyContour&) const = default;
};

/// Highest sounding pitch per frame; frame f samples time f / frame_rate.
MelodyContour skyline(const PianoPerformance& perf, double frame_rate = 100.0);

/// Raw chroma accuracy: a reference-voiced frame is correct when the estimate
/// is voiced and the octave-folded pitch difference is within 0.5 semitone.
/// Estimate frames past its end count as unvoiced.
double mca(const MelodyContour& reference, const MelodyContour& estimate);

using GrooveVector = std::array<bool, kPositionsPerBar>;

/// Notes grouped by the 4/4 bar of their quantized onset (pitch, position).
struct BarNotes {
  std::vector<std::pair<int, int>> notes;
};
std::vector<BarNotes> notes_by_bar(const PianoPerformance& perf, const BeatGrid& grid);

double pitch_class_entropy(const std::vector<int>& pitch_class_counts);
/// Mean entropy (bits) over sliding windows of `window` bars, stride 1,
/// skipping windows without notes.
double pitch_class_entropy_4(const std::vector<BarNotes>& bars, int window = 4);
double pitch_class_entropy_4(const PianoPerformance& perf, const BeatGrid& grid);

GrooveVector groove_vector(const BarNotes& bar);
double grooving_similarity(const GrooveVector& a, const GrooveVector& b);
/// Mean GS over consecutive bar pairs.
double grooving_similarity_next(const std::vector<BarNotes>& bars);
double grooving_similarity_next(const PianoPerformance& perf, const BeatGrid& grid);

}  // namespace covergen
