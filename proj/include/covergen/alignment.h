// Chroma DTW between a piano performance and a song, the resulting time
// mapping function, and the note-remapping (strong alignment) baseline.

#pragma once

#include <utility>
#include <vector>

#include "covergen/core.h"
#include "covergen/features.h"

namespace covergen {

struct WarpStep {
  int i = 0;
  int j = 0;
  bool operator==(const WarpStep&) const = default;
};

/// Admissible DTW steps in tie-break order.
inline constexpr WarpStep kWarpSteps[3] = {{1, 1}, {1, 2}, {2, 1}};

struct WarpPath {
  std::vector<WarpStep> points;
  double cost = 0.0;  // accumulated local cost over every path point
};

/// Cosine distance between two frames; zero frames are at distance 1.
double cosine_distance(std::span<const float> a, std::span<const float> b);

/// Local cost matrix, row-major a.frames x b.frames.
std::vector<double> cost_matrix(const FeatureMatrix& a, const FeatureMatrix& b);

/// Minimum-cost path from (0,0) to (Fa-1,Fb-1) over steps (1,1), (1,2),
/// (2,1) with unit weights. Throws Error(kInfeasible) when the end point is
/// unreachable with these steps.
WarpPath dtw_path(const FeatureMatrix& a, const FeatureMatrix& b);
WarpPath dtw_path_from_costs(const std::vector<double>& cost, int rows, int cols);

/// Validates the WarpPath invariants; throws Error(kInvalidArgument).
void validate(const WarpPath& path, int rows, int cols);

/// Piecewise-linear monotone map from piano seconds to song seconds.
class TimeMap {
 public:
  TimeMap() = default;
  /// Knots must be non-decreasing in both coordinates with strictly
  /// increasing piano time. Throws Error(kInvalidArgument).
  explicit TimeMap(std::vector<std::pair<double, double>> knots);

  static TimeMap identity(double length);
  static TimeMap linear(double slope, double length, double offset = 0.0);

  /// Linear interpolation, clamped to the first/last knot outside the span.
  double operator()(double t_piano) const;

  const std::vector<std::pair<double, double>>& knots() const { return knots_; }
  double piano_span() const { return knots_.empty() ? 0.0 : knots_.back().first; }

 private:
  std::vector<std::pair<double, double>> knots_;
};

TimeMap time_map_from_path(const WarpPath& path, double frame_rate);

/// Strong-alignment baseline: each onset/offset is mapped through the time
/// map, the onset is snapped to the nearest sixteenth of the song grid and the
/// duration floored at one subdivision. Pitches and velocities are kept.
PianoPerformance remap_notes(const PianoPerformance& perf, const TimeMap& map, const BeatGrid& song_grid);

}  // namespace covergen
