// Deviation ratios between songs and covers (longer / shorter).

#pragma once

#include <string>
#include <vector>

#include "covergen/core.h"

namespace covergen {

double duration_deviation(double len_a, double len_b);
double tempo_deviation(double bpm_a, double bpm_b);
/// Ratio of mean inter-onset intervals (successive sorted onsets, chord
/// notes included as zero intervals). Needs >= 2 notes in each.
double ioi_deviation(const PianoPerformance& original, const PianoPerformance& remapped);

/// 60 / median inter-beat interval.
double estimate_bpm(const BeatGrid& grid);
double mean_ioi(const PianoPerformance& perf);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  std::size_t count = 0;
};
MeanStd mean_std(const std::vector<double>& values);
/// "1.10 ± 0.12"
std::string format_mean_std(const MeanStd& value, int decimals = 2);

}  // namespace covergen
