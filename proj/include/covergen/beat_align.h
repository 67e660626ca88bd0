// Beat-level weak alignment between a piano cover and its song.

#pragma once

#include <set>
#include <vector>

#include "covergen/alignment.h"
#include "covergen/core.h"
#include "covergen/features.h"
#include "covergen/remi.h"

namespace covergen {

/// mapping[i] is the song beat nearest to F_time(piano beat i).
struct BeatAlignment {
  std::vector<int> mapping;
  BeatGrid piano_grid;
  BeatGrid song_grid;

  bool is_monotone() const;
};

/// For each piano beat i, the song beat j minimizing |F_time(q_p[i]) - q_s[j]|;
/// ties go to the smaller j.
BeatAlignment beat_align(const TimeMap& map, const BeatGrid& piano_grid, const BeatGrid& song_grid);

/// Bars whose start and end beats map to the same song beat. Throws
/// Error(kOutOfRange) for bars referencing beats beyond the alignment.
std::set<int> find_invalid_bars(const BeatAlignment& alignment, const std::vector<Bar>& bars);

/// Song-beat range [first, last) that a piano bar corresponds to.
struct SongSegment {
  int start_beat = 0;
  int end_beat = 0;
};
SongSegment song_segment(const BeatAlignment& alignment, const Bar& bar);

struct WeakAlignedPair {
  std::string id;
  PianoPerformance piano;
  TokenSequence tokens;
  FeatureMatrix song_features;
  BeatAlignment alignment;
  std::vector<Bar> bars;        // every bar of the piano grid
  std::vector<Bar> valid_bars;  // bars with a non-empty song segment
  std::set<int> invalid_bars;   // flat-warp bars
  std::set<int> open_bars;      // bars ending past the last annotated piano beat
};

/// Assembles a weakly-aligned pair. Piano notes are never re-timed; only the
/// bar -> song segment correspondence is recorded.
WeakAlignedPair build_weak_pair(const PianoPerformance& piano, const FeatureMatrix& song_features,
                                const TimeMap& map, const BeatGrid& piano_grid, const BeatGrid& song_grid,
                                const Vocabulary& vocab);

}  // namespace covergen
