#include "covergen/metrics.h"

#include <cmath>

#include "covergen/error.h"

namespace covergen {

MelodyContour skyline(const PianoPerformance& perf, double frame_rate) {
  if (!(frame_rate > 0.0)) throw Error(ErrorCode::kInvalidArgument, "frame rate must be positive");
  MelodyContour out;
  out.frame_rate = frame_rate;
  const double end = std::max(perf.length, perf.end_time());
  const auto frames = static_cast<std::size_t>(std::ceil(end * frame_rate - 1e-9));
  out.pitches.assign(frames, std::nullopt);
  for (const auto& n : perf.notes) {
    const auto f0 = static_cast<std::size_t>(std::max(0.0, std::ceil(n.onset * frame_rate - 1e-9)));
    for (std::size_t f = f0; f < frames; ++f) {
      const double t = static_cast<double>(f) / frame_rate;
      if (t >= n.offset()) break;
      if (t < n.onset) continue;
      auto& p = out.pitches[f];
      if (!p || *p < n.pitch) p = n.pitch;
    }
  }
  return out;
}

double mca(const MelodyContour& reference, const MelodyContour& estimate) {
  if (std::abs(reference.frame_rate - estimate.frame_rate) > 1e-9) {
    throw Error(ErrorCode::kInvalidArgument, "mca: frame rates differ");
  }
  std::size_t voiced = 0, correct = 0;
  for (std::size_t f = 0; f < reference.pitches.size(); ++f) {
    const auto& r = reference.pitches[f];
    if (!r) continue;
    ++voiced;
    if (f >= estimate.pitches.size() || !estimate.pitches[f]) continue;
    double d = std::fmod(*estimate.pitches[f] - *r, 12.0);
    if (d > 6.0) d -= 12.0;
    if (d <= -6.0) d += 12.0;
    if (std::abs(d) <= 0.5) ++correct;
  }
  if (voiced == 0) throw Error(ErrorCode::kInvalidArgument, "mca: reference has no voiced frames");
  return static_cast<double>(correct) / static_cast<double>(voiced);
}

std::vector<BarNotes> notes_by_bar(const PianoPerformance& perf, const BeatGrid& grid) {
  require_four_four(grid);
  const auto bars = bars_from_grid(grid);
  std::vector<BarNotes> out(bars.size());
  for (const auto& n : perf.notes) {
    const long long g = nearest_subdivision(n.onset, grid);
    const int bar = bar_of_beat(grid, static_cast<int>(g / kSubdivisionsPerBeat));
    if (bar < 0) continue;
    const long long pos = g - static_cast<long long>(bars[static_cast<std::size_t>(bar)].start_beat) * kSubdivisionsPerBeat;
    if (pos < 0 || pos >= kPositionsPerBar) continue;  // past the final bar
    out[static_cast<std::size_t>(bar)].notes.emplace_back(n.pitch, static_cast<int>(pos));
  }
  return out;
}

double pitch_class_entropy(const std::vector<int>& counts) {
  double total = 0.0;
  for (int c : counts) total += c;
  if (total <= 0.0) throw Error(ErrorCode::kInvalidArgument, "entropy of an empty histogram");
  double h = 0.0;
  for (int c : counts) {
    if (c <= 0) continue;
    const double p = c / total;
    h -= p * std::log2(p);
  }
  return h;
}

double pitch_class_entropy_4(const std::vector<BarNotes>& bars, int window) {
  if (window <= 0) throw Error(ErrorCode::kInvalidArgument, "window must be positive");
  if (static_cast<int>(bars.size()) < window) {
    throw Error(ErrorCode::kInvalidArgument, "pitch-class entropy needs at least " + std::to_string(window) + " bars");
  }
  double sum = 0.0;
  int windows = 0;
  for (std::size_t start = 0; start + static_cast<std::size_t>(window) <= bars.size(); ++start) {
    std::vector<int> counts(12, 0);
    int notes = 0;
    for (std::size_t b = start; b < start + static_cast<std::size_t>(window); ++b) {
      for (const auto& [pitch, pos] : bars[b].notes) {
        ++counts[static_cast<std::size_t>(pitch % 12)];
        ++notes;
      }
    }
    if (notes == 0) continue;
    sum += pitch_class_entropy(counts);
    ++windows;
  }
  if (windows == 0) throw Error(ErrorCode::kInvalidArgument, "no window contains notes");
  return sum / windows;
}

double pitch_class_entropy_4(const PianoPerformance& perf, const BeatGrid& grid) {
  return pitch_class_entropy_4(notes_by_bar(perf, grid));
}

GrooveVector groove_vector(const BarNotes& bar) {
  GrooveVector g{};
  for (const auto& [pitch, pos] : bar.notes) {
    if (pos >= 0 && pos < kPositionsPerBar) g[static_cast<std::size_t>(pos)] = true;
  }
  return g;
}

double grooving_similarity(const GrooveVector& a, const GrooveVector& b) {
  int diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
  return 1.0 - static_cast<double>(diff) / static_cast<double>(a.size());
}

double grooving_similarity_next(const std::vector<BarNotes>& bars) {
  if (bars.size() < 2) throw Error(ErrorCode::kInvalidArgument, "grooving similarity needs at least two bars");
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < bars.size(); ++i) {
    sum += grooving_similarity(groove_vector(bars[i]), groove_vector(bars[i + 1]));
  }
  return sum / static_cast<double>(bars.size() - 1);
}

double grooving_similarity_next(const PianoPerformance& perf, const BeatGrid& grid) {
  return grooving_similarity_next(notes_by_bar(perf, grid));
}

}  // namespace covergen
