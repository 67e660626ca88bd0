/**
 * @file test_core.cpp
 * @brief Beat grids, quantization and MIDI I/O.
 */

#include <gtest/gtest.h>

#include <algorithm>

#include <random>

#include "covergen/core.h"
#include "covergen/error.h"
#include "covergen/midi_file.h"
#include "test_support.h"

namespace covergen {
namespace {

TEST(BeatGridFromTempo, ConstantTempo) {
  const TempoEvent t{0.0, 120.0};
  const BeatGrid g = build_beat_grid_from_tempo(std::span(&t, 1), 2.0);
  EXPECT_EQ(g.beat_times(), (std::vector<double>{0.0, 0.5, 1.0, 1.5}));
  EXPECT_EQ(g.downbeat_indices(), std::vector<int>{0});

  const TempoEvent slow{0.0, 60.0};
  EXPECT_EQ(build_beat_grid_from_tempo(std::span(&slow, 1), 4.0).beat_times(),
            (std::vector<double>{0, 1, 2, 3}));
}

TEST(BeatGridFromTempo, PiecewiseTempo) {
  const std::vector<TempoEvent> ev{{0.0, 120.0}, {1.0, 60.0}};
  const BeatGrid g = build_beat_grid_from_tempo(ev, 3.0);
  ASSERT_EQ(g.count(), 4);
  const double want[] = {0.0, 0.5, 1.0, 2.0};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(g.beat_times()[i], want[i], 1e-12);
}

TEST(BeatGridFromTempo, ConstantTempoIsArithmetic) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> bpm(40.0, 200.0);
  for (int trial = 0; trial < 50; ++trial) {
    const TempoEvent t{0.0, bpm(rng)};
    const BeatGrid g = build_beat_grid_from_tempo(std::span(&t, 1), 30.0);
    for (int i = 0; i < g.count(); ++i) EXPECT_NEAR(g.beat_times()[i], i * 60.0 / t.bpm, 1e-9);
    for (std::size_t d = 0; d < g.downbeat_indices().size(); ++d) EXPECT_EQ(g.downbeat_indices()[d], 4 * static_cast<int>(d));
  }
}

TEST(BeatGridFromTempo, Errors) {
  EXPECT_THROW(build_beat_grid_from_tempo({}, 2.0), Error);
  const TempoEvent t{0.0, 120.0};
  EXPECT_THROW(build_beat_grid_from_tempo(std::span(&t, 1), 0.0), Error);
}

TEST(BeatGrid, RejectsBadInput) {
  EXPECT_THROW(BeatGrid({0.0, 0.0, 1.0}, {0}), Error);
  EXPECT_THROW(BeatGrid({0.0, 0.5, 1.0}, {3}), Error);
  EXPECT_THROW(BeatGrid({0.0, 0.5, 1.0}, {1, 0}), Error);
}

TEST(QuantizeTime, Examples) {
  const BeatGrid g({0.0, 0.5, 1.0}, {0});
  auto p = quantize_time(0.5, g);
  EXPECT_EQ(p.bar, 0);
  EXPECT_EQ(p.position, 4);
  EXPECT_FALSE(p.clamped);
  EXPECT_EQ(quantize_time(0.13, g).position, 1);
  EXPECT_EQ(quantize_time(0.0625, g).position, 0);
}

TEST(QuantizeTime, NearestOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const BeatGrid g = test::random_grid(rng, 3);
    std::uniform_real_distribution<double> u(0.0, g.beat_times().back());
    for (int k = 0; k < 50; ++k) {
      const double t = u(rng);
      long long best = 0;
      double bd = 1e9;
      for (long long s = 0; s <= static_cast<long long>(g.count() - 1) * 4; ++s) {
        const double d = std::abs(g.subdivision_time(s) - t);
        if (d < bd) {
          bd = d;
          best = s;
        }
      }
      EXPECT_EQ(quantize_time(t, g).subdivision, best);
    }
  }
}

TEST(QuantizeTime, Idempotent) {
  std::mt19937_64 rng(12);
  const BeatGrid g = test::random_grid(rng, 4);
  for (long long s = 0; s <= static_cast<long long>(g.count() - 1) * 4; ++s) {
    const auto p = quantize_time(g.subdivision_time(s), g);
    EXPECT_EQ(p.subdivision, s);
    EXPECT_EQ(quantize_time(g.subdivision_time(p.subdivision), g).subdivision, s);
  }
}

TEST(QuantizeTime, ClampsOutside) {
  const BeatGrid g({0.0, 0.5, 1.0}, {0});
  const auto p = quantize_time(5.0, g);
  EXPECT_TRUE(p.clamped);
  EXPECT_EQ(p.subdivision, 8);
}

TEST(Bars, OneBarPerDownbeat) {
  const BeatGrid g = test::constant_grid(120.0, 9);
  const auto bars = bars_from_grid(g);
  ASSERT_EQ(bars.size(), 3u);
  EXPECT_EQ(bars[1], (Bar{1, 4, 8}));
  EXPECT_EQ(bars[2], (Bar{2, 8, 12}));
  EXPECT_EQ(bar_of_beat(g, 5), 1);
}

TEST(NoteEvent, Validation) {
  EXPECT_THROW(validate(NoteEvent{20, 0.0, 1.0, 64}), Error);
  EXPECT_THROW(validate(NoteEvent{60, 0.0, 0.0, 64}), Error);
  EXPECT_NO_THROW(validate(NoteEvent{60, 0.0, 0.1, 64}));
}

TEST(Midi, RoundTrip) {
  const BeatGrid g = test::constant_grid(120.0, 17);
  const Vocabulary vocab;
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto notes = test::random_quantized(rng, g, vocab).notes;
    // Overlapping notes of one pitch pair their note-offs ambiguously.
    std::vector<NoteEvent> kept;
    for (const auto& n : notes) {
      const bool clash = std::any_of(kept.begin(), kept.end(), [&](const NoteEvent& k) {
        return k.pitch == n.pitch && n.onset < k.offset() + 1e-9;
      });
      if (!clash) kept.push_back(n);
    }
    const auto perf = PianoPerformance::make(kept, {}, g.beat_times().back());
    const auto back = parse_midi(serialize_midi(perf)).performance;
    ASSERT_EQ(back.notes.size(), perf.notes.size());
    for (std::size_t i = 0; i < perf.notes.size(); ++i) {
      EXPECT_EQ(back.notes[i].pitch, perf.notes[i].pitch);
      EXPECT_EQ(back.notes[i].velocity, perf.notes[i].velocity);
      EXPECT_NEAR(back.notes[i].onset, perf.notes[i].onset, 1e-3);
      EXPECT_NEAR(back.notes[i].duration, perf.notes[i].duration, 1e-3);
    }
  }
}

TEST(Midi, MalformedReportsOffset) {
  const std::vector<std::uint8_t> junk{'M', 'T', 'h', 'd', 0, 0};
  try {
    parse_midi(junk);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParse);
    EXPECT_TRUE(e.offset().has_value());
  }
}

}  // namespace
}  // namespace covergen
