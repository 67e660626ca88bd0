#include "covergen/stats.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "covergen/error.h"

namespace covergen {

namespace {

double ratio(double a, double b, const char* what) {
  if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
    throw Error(ErrorCode::kInvalidArgument, std::string(what) + " must be positive");
  }
  return std::max(a, b) / std::min(a, b);
}

}  // namespace

double duration_deviation(double len_a, double len_b) { return ratio(len_a, len_b, "lengths"); }

double tempo_deviation(double bpm_a, double bpm_b) { return ratio(bpm_a, bpm_b, "tempi"); }

double mean_ioi(const PianoPerformance& perf) {
  if (perf.notes.size() < 2) throw Error(ErrorCode::kInvalidArgument, "IOI needs at least two notes");
  std::vector<double> onsets;
  onsets.reserve(perf.notes.size());
  for (const auto& n : perf.notes) onsets.push_back(n.onset);
  std::sort(onsets.begin(), onsets.end());
  return (onsets.back() - onsets.front()) / static_cast<double>(onsets.size() - 1);
}

double ioi_deviation(const PianoPerformance& original, const PianoPerformance& remapped) {
  if (original.notes.size() != remapped.notes.size()) {
    throw Error(ErrorCode::kInvalidArgument, "IOI deviation needs equal note counts");
  }
  return ratio(mean_ioi(original), mean_ioi(remapped), "mean IOIs");
}

double estimate_bpm(const BeatGrid& grid) {
  const auto& b = grid.beat_times();
  if (b.size() < 2) throw Error(ErrorCode::kInvalidArgument, "BPM estimate needs at least two beats");
  std::vector<double> ibi;
  for (std::size_t i = 1; i < b.size(); ++i) ibi.push_back(b[i] - b[i - 1]);
  std::sort(ibi.begin(), ibi.end());
  const std::size_t m = ibi.size() / 2;
  const double median = ibi.size() % 2 ? ibi[m] : 0.5 * (ibi[m - 1] + ibi[m]);
  return 60.0 / median;
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  out.count = values.size();
  if (values.empty()) return out;
  double s = 0.0;
  for (double v : values) s += v;
  out.mean = s / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(ss / static_cast<double>(values.size()));
  return out;
}

std::string format_mean_std(const MeanStd& value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f ± %.*f", decimals, value.mean, decimals, value.stddev);
  return buf;
}

}  // namespace covergen
