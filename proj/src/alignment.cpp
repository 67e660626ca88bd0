#include "covergen/alignment.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "covergen/error.h"

namespace covergen {

double cosine_distance(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += static_cast<double>(a[k]) * b[k];
    na += static_cast<double>(a[k]) * a[k];
    nb += static_cast<double>(b[k]) * b[k];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / std::sqrt(na * nb);
}

std::vector<double> cost_matrix(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.dims != b.dims) throw Error(ErrorCode::kShapeMismatch, "feature dimensions differ");
  std::vector<double> c(static_cast<std::size_t>(a.frames) * b.frames);
  for (int i = 0; i < a.frames; ++i) {
    for (int j = 0; j < b.frames; ++j) {
      c[static_cast<std::size_t>(i) * b.frames + j] = cosine_distance(a.row(i), b.row(j));
    }
  }
  return c;
}

WarpPath dtw_path_from_costs(const std::vector<double>& cost, int rows, int cols) {
  if (rows <= 0 || cols <= 0) throw Error(ErrorCode::kInvalidArgument, "dtw: empty input");
  if (cost.size() != static_cast<std::size_t>(rows) * cols) {
    throw Error(ErrorCode::kShapeMismatch, "dtw: cost matrix size mismatch");
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  auto idx = [cols](int i, int j) { return static_cast<std::size_t>(i) * cols + j; };
  std::vector<double> acc(cost.size(), kInf);
  std::vector<signed char> from(cost.size(), -1);
  acc[0] = cost[0];
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      if (i == 0 && j == 0) continue;
      double best = kInf;
      signed char arg = -1;
      for (int s = 0; s < 3; ++s) {
        const int pi = i - kWarpSteps[s].i, pj = j - kWarpSteps[s].j;
        if (pi < 0 || pj < 0) continue;
        const double v = acc[idx(pi, pj)];
        if (v < best) {  // strict: earlier steps win ties
          best = v;
          arg = static_cast<signed char>(s);
        }
      }
      if (arg >= 0) {
        acc[idx(i, j)] = best + cost[idx(i, j)];
        from[idx(i, j)] = arg;
      }
    }
  }
  if (!std::isfinite(acc[idx(rows - 1, cols - 1)])) {
    throw Error(ErrorCode::kInfeasible, "dtw: no admissible path between " + std::to_string(rows) + " and " +
                                            std::to_string(cols) + " frames");
  }
  WarpPath path;
  path.cost = acc[idx(rows - 1, cols - 1)];
  int i = rows - 1, j = cols - 1;
  path.points.push_back({i, j});
  while (i != 0 || j != 0) {
    const auto s = kWarpSteps[from[idx(i, j)]];
    i -= s.i;
    j -= s.j;
    path.points.push_back({i, j});
  }
  std::reverse(path.points.begin(), path.points.end());
  return path;
}

WarpPath dtw_path(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.frames == 0 || b.frames == 0) throw Error(ErrorCode::kInvalidArgument, "dtw: empty input");
  if (std::abs(a.frame_rate - b.frame_rate) > 1e-9) {
    throw Error(ErrorCode::kInvalidArgument, "dtw: frame rates differ");
  }
  return dtw_path_from_costs(cost_matrix(a, b), a.frames, b.frames);
}

void validate(const WarpPath& path, int rows, int cols) {
  if (path.points.empty()) throw Error(ErrorCode::kInvalidArgument, "warp path is empty");
  if (path.points.front() != WarpStep{0, 0}) throw Error(ErrorCode::kInvalidArgument, "warp path must start at (0,0)");
  if (path.points.back() != WarpStep{rows - 1, cols - 1}) {
    throw Error(ErrorCode::kInvalidArgument, "warp path must end at the last frame pair");
  }
  for (std::size_t k = 1; k < path.points.size(); ++k) {
    const WarpStep d{path.points[k].i - path.points[k - 1].i, path.points[k].j - path.points[k - 1].j};
    if (d != kWarpSteps[0] && d != kWarpSteps[1] && d != kWarpSteps[2]) {
      throw Error(ErrorCode::kInvalidArgument, "warp path contains an inadmissible step");
    }
  }
}

TimeMap::TimeMap(std::vector<std::pair<double, double>> knots) : knots_(std::move(knots)) {
  if (knots_.empty()) throw Error(ErrorCode::kInvalidArgument, "time map needs at least one knot");
  for (std::size_t k = 0; k < knots_.size(); ++k) {
    if (!std::isfinite(knots_[k].first) || !std::isfinite(knots_[k].second)) {
      throw Error(ErrorCode::kInvalidArgument, "time map knots must be finite");
    }
    if (k > 0 && (!(knots_[k].first > knots_[k - 1].first) || knots_[k].second < knots_[k - 1].second)) {
      throw Error(ErrorCode::kInvalidArgument, "time map knots must be monotone");
    }
  }
}

TimeMap TimeMap::identity(double length) { return TimeMap({{0.0, 0.0}, {length, length}}); }

TimeMap TimeMap::linear(double slope, double length, double offset) {
  return TimeMap({{0.0, offset}, {length, offset + slope * length}});
}

double TimeMap::operator()(double t) const {
  if (knots_.empty()) throw Error(ErrorCode::kState, "empty time map");
  if (t <= knots_.front().first) return knots_.front().second;
  if (t >= knots_.back().first) return knots_.back().second;
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), t,
                                   [](double v, const auto& k) { return v < k.first; });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double frac = (t - lo.first) / (hi.first - lo.first);
  return lo.second + frac * (hi.second - lo.second);
}

TimeMap time_map_from_path(const WarpPath& path, double frame_rate) {
  if (!(frame_rate > 0.0)) throw Error(ErrorCode::kInvalidArgument, "frame rate must be positive");
  std::vector<std::pair<double, double>> knots;
  knots.reserve(path.points.size());
  for (const auto& p : path.points) knots.emplace_back(p.i / frame_rate, p.j / frame_rate);
  if (knots.size() == 1) knots.emplace_back(knots[0].first + 1.0 / frame_rate, knots[0].second);
  return TimeMap(std::move(knots));
}

PianoPerformance remap_notes(const PianoPerformance& perf, const TimeMap& map, const BeatGrid& song_grid) {
  if (song_grid.empty()) throw Error(ErrorCode::kInvalidArgument, "empty song grid");
  std::vector<NoteEvent> out;
  out.reserve(perf.notes.size());
  for (const auto& n : perf.notes) {
    const double on = map(n.onset);
    const double off = map(n.offset());
    const long long g = nearest_subdivision(on, song_grid);
    double onset = song_grid.subdivision_time(g);
    if (onset < 0.0) onset = 0.0;
    const double min_dur = song_grid.subdivision_time(g + 1) - song_grid.subdivision_time(g);
    out.push_back({n.pitch, onset, std::max(off - onset, min_dur), n.velocity});
  }
  return PianoPerformance::make(std::move(out), {}, map(perf.length));
}

}  // namespace covergen
