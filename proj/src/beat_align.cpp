#include "covergen/beat_align.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "covergen/error.h"

namespace covergen {

bool BeatAlignment::is_monotone() const {
  return std::is_sorted(mapping.begin(), mapping.end());
}

BeatAlignment beat_align(const TimeMap& map, const BeatGrid& piano_grid, const BeatGrid& song_grid) {
  if (piano_grid.empty() || song_grid.empty()) throw Error(ErrorCode::kInvalidArgument, "beat_align: empty grid");
  const auto& qs = song_grid.beat_times();
  BeatAlignment out;
  out.piano_grid = piano_grid;
  out.song_grid = song_grid;
  out.mapping.reserve(piano_grid.beat_times().size());
  for (double qp : piano_grid.beat_times()) {
    const double target = map(qp);
    const auto it = std::lower_bound(qs.begin(), qs.end(), target);
    int j = static_cast<int>(it - qs.begin());
    if (j == static_cast<int>(qs.size())) {
      j -= 1;
    } else if (j > 0 && std::abs(target - qs[static_cast<std::size_t>(j - 1)]) <=
                            std::abs(target - qs[static_cast<std::size_t>(j)])) {
      j -= 1;
    }
    out.mapping.push_back(j);
  }
  return out;
}

std::set<int> find_invalid_bars(const BeatAlignment& alignment, const std::vector<Bar>& bars) {
  std::set<int> invalid;
  const int n = static_cast<int>(alignment.mapping.size());
  for (const Bar& bar : bars) {
    if (bar.start_beat < 0 || bar.end_beat >= n || bar.start_beat >= bar.end_beat) {
      throw Error(ErrorCode::kOutOfRange, "bar " + std::to_string(bar.index) + " references beats outside the alignment");
    }
    if (alignment.mapping[static_cast<std::size_t>(bar.start_beat)] ==
        alignment.mapping[static_cast<std::size_t>(bar.end_beat)]) {
      invalid.insert(bar.index);
    }
  }
  return invalid;
}

SongSegment song_segment(const BeatAlignment& alignment, const Bar& bar) {
  const int n = static_cast<int>(alignment.mapping.size());
  if (bar.start_beat < 0 || bar.end_beat >= n) {
    throw Error(ErrorCode::kOutOfRange, "bar " + std::to_string(bar.index) + " references beats outside the alignment");
  }
  return {alignment.mapping[static_cast<std::size_t>(bar.start_beat)],
          alignment.mapping[static_cast<std::size_t>(bar.end_beat)]};
}

WeakAlignedPair build_weak_pair(const PianoPerformance& piano, const FeatureMatrix& song_features,
                                const TimeMap& map, const BeatGrid& piano_grid, const BeatGrid& song_grid,
                                const Vocabulary& vocab) {
  require_four_four(piano_grid);
  if (song_grid.empty()) throw Error(ErrorCode::kInvalidArgument, "empty song grid");
  WeakAlignedPair pair;
  pair.piano = piano;
  pair.tokens = encode(piano, piano_grid, vocab, extract_chords(piano, piano_grid));
  pair.song_features = song_features;
  pair.alignment = beat_align(map, piano_grid, song_grid);
  pair.bars = bars_from_grid(piano_grid);
  std::vector<Bar> closed;
  for (const Bar& bar : pair.bars) {
    if (bar.end_beat < piano_grid.count()) {
      closed.push_back(bar);
    } else {
      pair.open_bars.insert(bar.index);
    }
  }
  pair.invalid_bars = find_invalid_bars(pair.alignment, closed);
  for (const Bar& bar : closed) {
    if (!pair.invalid_bars.count(bar.index)) pair.valid_bars.push_back(bar);
  }
  return pair;
}

}  // namespace covergen
