#include "covergen/synth.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "covergen/error.h"

namespace covergen {

PcmBuffer render_notes(const PianoPerformance& perf, int sample_rate, double length) {
  if (sample_rate <= 0 || !(length > 0.0)) throw Error(ErrorCode::kInvalidArgument, "invalid render length");
  PcmBuffer pcm;
  pcm.sample_rate = sample_rate;
  pcm.samples.assign(static_cast<std::size_t>(std::ceil(length * sample_rate)), 0.0f);
  const double release = 0.02;
  for (const auto& n : perf.notes) {
    const double f0 = 440.0 * std::pow(2.0, (n.pitch - 69) / 12.0);
    const double amp = 0.2 * n.velocity / 127.0;
    const auto s0 = static_cast<std::size_t>(std::max(0.0, n.onset * sample_rate));
    const auto s1 = std::min(pcm.samples.size(),
                             static_cast<std::size_t>(std::ceil((n.offset() + release) * sample_rate)));
    for (std::size_t s = s0; s < s1; ++s) {
      const double t = static_cast<double>(s) / sample_rate - n.onset;
      double env = std::min(1.0, t / 0.005) * std::exp(-1.5 * t);
      if (t > n.duration) env *= std::max(0.0, 1.0 - (t - n.duration) / release);
      double v = 0.0;
      for (int h = 1; h <= 3; ++h) {
        if (f0 * h >= 0.5 * sample_rate) break;
        v += std::sin(2.0 * std::numbers::pi * f0 * h * t) / (1 << (h - 1));
      }
      pcm.samples[s] += static_cast<float>(amp * env * v);
    }
  }
  float peak = 0.0f;
  for (float s : pcm.samples) peak = std::max(peak, std::abs(s));
  if (peak > 0.0f) {
    for (float& s : pcm.samples) s *= 0.8f / peak;
  }
  return pcm;
}

SynthPiece synth_piece(const std::string& id, const SynthOptions& opt, std::uint64_t seed) {
  if (opt.bars <= 0 || opt.bars > 12) throw Error(ErrorCode::kInvalidArgument, "bars must lie in 1..12");
  if (!(opt.bpm > 0.0) || !(opt.warp > 0.0)) throw Error(ErrorCode::kInvalidArgument, "bpm and warp must be positive");
  std::mt19937_64 rng(seed);
  const double period = 60.0 / opt.bpm;
  const double sixteenth = period / kSubdivisionsPerBeat;

  SynthPiece piece;
  piece.id = id;
  const TempoEvent tempo{0.0, opt.bpm};
  piece.piano_grid = build_beat_grid_from_tempo(std::span(&tempo, 1), (kBeatsPerBar * opt.bars + 0.5) * period);

  std::vector<int> roots(12);
  std::iota(roots.begin(), roots.end(), 0);
  std::shuffle(roots.begin(), roots.end(), rng);
  std::uniform_int_distribution<int> coin(0, 1);
  const int velocities[] = {64, 80, 96, 112};
  std::uniform_int_distribution<int> vel_pick(0, 3);

  std::vector<NoteEvent> notes;
  for (int b = 0; b < opt.bars; ++b) {
    const double t0 = piece.piano_grid.time_at(b * kBeatsPerBar);
    const int root = roots[static_cast<std::size_t>(b)];
    const bool minor = coin(rng) == 1;
    const int third = minor ? 3 : 4;
    const int vel = velocities[vel_pick(rng)];
    notes.push_back({36 + root, t0, 16 * sixteenth, vel});
    for (int iv : {0, third, 7}) notes.push_back({60 + (root + iv) % 12, t0, 8 * sixteenth, vel});

    std::vector<int> slots(8);
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);
    slots.resize(4);
    std::sort(slots.begin(), slots.end());
    const int tones[] = {0, third, 7, 12};
    std::uniform_int_distribution<int> tone_pick(0, 3);
    for (int s : slots) {
      const int pitch = 72 + root + tones[tone_pick(rng)];
      notes.push_back({pitch, t0 + 2 * s * sixteenth, 2 * sixteenth, velocities[vel_pick(rng)]});
    }
  }
  const double piano_len = piece.piano_grid.beat_times().back() + 0.5 * period;
  piece.piano = PianoPerformance::make(std::move(notes), {tempo}, piano_len);

  // Warp: each non-flat piano bar spans four song beats, flat bars none.
  piece.flat_bars = opt.flat_bars;
  const double song_period = period * opt.warp;
  std::vector<std::pair<double, double>> knots;
  int song_beat = 0;
  const int piano_beats = piece.piano_grid.count();
  for (int i = 0; i < piano_beats; ++i) {
    knots.emplace_back(piece.piano_grid.beat_times()[static_cast<std::size_t>(i)], song_beat * song_period);
    if (i + 1 < piano_beats && !opt.flat_bars.count(i / kBeatsPerBar)) ++song_beat;
  }
  const double song_t = song_beat * song_period;
  piece.warp = TimeMap(knots);
  std::vector<double> song_beats;
  for (int i = 0; i <= song_beat; ++i) song_beats.push_back(i * song_period);
  std::vector<int> downbeats;
  for (int i = 0; i < static_cast<int>(song_beats.size()); i += kBeatsPerBar) downbeats.push_back(i);
  piece.song_grid = BeatGrid(song_beats, downbeats);

  std::vector<NoteEvent> moved;
  for (const auto& n : piece.piano.notes) {
    const double a = piece.warp(n.onset), b = piece.warp(n.offset());
    if (b - a > 1e-9) moved.push_back({n.pitch, a, b - a, n.velocity});
  }
  const double song_len = song_t + 0.5 * song_period;
  piece.song_notes = PianoPerformance::make(std::move(moved), {{0.0, opt.bpm / opt.warp}}, song_len);
  piece.reference = skyline(piece.song_notes, 100.0);
  if (opt.render_audio) piece.song_audio = render_notes(piece.song_notes, opt.sample_rate, song_len);
  return piece;
}

}  // namespace covergen
