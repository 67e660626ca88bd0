/**
 * @file test_beat_align.cpp
 * @brief Beat mapping, invalid-bar detection and weak pairs.
 */

#include <gtest/gtest.h>

#include <random>

#include "covergen/beat_align.h"
#include "covergen/error.h"
#include "covergen/stats.h"
#include "covergen/synth.h"
#include "test_support.h"

namespace covergen {
namespace {

// argmin_j |F(q_p[i]) - q_s[j]|, first index on ties.
std::vector<int> exhaustive(const TimeMap& m, const BeatGrid& p, const BeatGrid& s) {
  std::vector<int> out;
  for (double q : p.beat_times()) {
    int best = 0;
    for (int j = 1; j < s.count(); ++j) {
      if (std::abs(m(q) - s.beat_times()[j]) < std::abs(m(q) - s.beat_times()[best])) best = j;
    }
    out.push_back(best);
  }
  return out;
}

TEST(BeatAlign, Identity) {
  const BeatGrid g = test::constant_grid(100.0, 12);
  const auto a = beat_align(TimeMap::identity(10.0), g, g);
  for (int i = 0; i < g.count(); ++i) EXPECT_EQ(a.mapping[i], i);
}

TEST(BeatAlign, DoubleSpeed) {
  const BeatGrid p({0, 1, 2, 3}, {0});
  const BeatGrid s({0, 2, 4, 6}, {0});
  EXPECT_EQ(beat_align(TimeMap::linear(2.0, 3.0), p, s).mapping, (std::vector<int>{0, 1, 2, 3}));
}

TEST(BeatAlign, ConstantMap) {
  const BeatGrid p({0, 1, 2, 3}, {0});
  const BeatGrid s({0, 2, 4, 6}, {0});
  const TimeMap c({{0.0, 4.6}, {3.0, 4.6}});
  EXPECT_EQ(beat_align(c, p, s).mapping, (std::vector<int>{2, 2, 2, 2}));
}

TEST(BeatAlign, TiesGoToSmallerIndex) {
  const BeatGrid p({0.0, 1.0}, {0});
  const BeatGrid s({0.0, 2.0}, {0});
  EXPECT_EQ(beat_align(TimeMap::identity(1.0), p, s).mapping, (std::vector<int>{0, 0}));
}

TEST(BeatAlign, ExhaustiveOracleAndMonotone) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const BeatGrid p = test::random_grid(rng, 3);
    const BeatGrid s = test::random_grid(rng, 5);
    const auto m = test::random_monotone_map(rng, p.beat_times().back());
    const auto a = beat_align(m, p, s);
    EXPECT_EQ(a.mapping, exhaustive(m, p, s));
    EXPECT_TRUE(a.is_monotone());
  }
}

TEST(BeatAlign, EmptyGridThrows) {
  EXPECT_THROW(beat_align(TimeMap::identity(1.0), BeatGrid(), test::constant_grid(120, 4)), Error);
}

TEST(InvalidBars, IdentityHasNone) {
  const BeatGrid g = test::constant_grid(120.0, 13);
  const auto a = beat_align(TimeMap::identity(10.0), g, g);
  std::vector<Bar> closed;
  for (const auto& b : bars_from_grid(g)) {
    if (b.end_beat < g.count()) closed.push_back(b);
  }
  EXPECT_TRUE(find_invalid_bars(a, closed).empty());
}

TEST(InvalidBars, FlatBarThree) {
  SynthOptions o;
  o.bars = 5;
  o.flat_bars = {3};
  o.render_audio = false;
  const auto piece = synth_piece("x", o, 1);
  const auto a = beat_align(piece.warp, piece.piano_grid, piece.song_grid);
  std::vector<Bar> closed;
  for (const auto& b : bars_from_grid(piece.piano_grid)) {
    if (b.end_beat < piece.piano_grid.count()) closed.push_back(b);
  }
  EXPECT_EQ(find_invalid_bars(a, closed), (std::set<int>{3}));
}

TEST(InvalidBars, AgreesWithDirectEvaluation) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    const BeatGrid p = test::random_grid(rng, 4);
    const BeatGrid s = test::random_grid(rng, 4);
    const auto m = test::random_monotone_map(rng, p.beat_times().back());
    const auto a = beat_align(m, p, s);
    const auto direct = exhaustive(m, p, s);
    std::vector<Bar> closed;
    std::set<int> want;
    for (const auto& b : bars_from_grid(p)) {
      if (b.end_beat >= p.count()) continue;
      closed.push_back(b);
      if (direct[b.start_beat] == direct[b.end_beat]) want.insert(b.index);
    }
    EXPECT_EQ(find_invalid_bars(a, closed), want);
  }
}

TEST(InvalidBars, OutOfRangeThrows) {
  const BeatGrid g = test::constant_grid(120.0, 5);
  const auto a = beat_align(TimeMap::identity(3.0), g, g);
  EXPECT_THROW(find_invalid_bars(a, {Bar{5, 20, 24}}), Error);
}

class WeakPairTest : public ::testing::Test {
 protected:
  Vocabulary vocab;
};

TEST_F(WeakPairTest, IdentityPairKeepsTokens) {
  SynthOptions o;
  o.render_audio = false;
  const auto piece = synth_piece("id", o, 3);
  const auto feats = chroma_from_midi(piece.piano);
  const auto pair = build_weak_pair(piece.piano, feats, TimeMap::identity(piece.piano.length), piece.piano_grid,
                                    piece.piano_grid, vocab);
  EXPECT_EQ(pair.valid_bars.size(), 4u);
  EXPECT_TRUE(pair.invalid_bars.empty());
  EXPECT_EQ(pair.tokens, encode(piece.piano, piece.piano_grid, vocab, extract_chords(piece.piano, piece.piano_grid)));
  EXPECT_EQ(pair.piano.notes, piece.piano.notes);
  EXPECT_EQ(ioi_deviation(piece.piano, pair.piano), 1.0);
}

TEST_F(WeakPairTest, FlatBarExcluded) {
  SynthOptions o;
  o.bars = 4;
  o.flat_bars = {1};
  o.warp = 1.2;
  o.render_audio = false;
  const auto piece = synth_piece("flat", o, 4);
  const auto pair = build_weak_pair(piece.piano, chroma_from_midi(piece.song_notes), piece.warp, piece.piano_grid,
                                    piece.song_grid, vocab);
  EXPECT_EQ(pair.invalid_bars, (std::set<int>{1}));
  for (const auto& b : pair.valid_bars) EXPECT_NE(b.index, 1);
  EXPECT_EQ(pair.piano.notes, piece.piano.notes);
  EXPECT_EQ(pair.open_bars, (std::set<int>{4}));
  for (const auto& b : pair.valid_bars) {
    const auto seg = song_segment(pair.alignment, b);
    EXPECT_LT(seg.start_beat, seg.end_beat);
  }
}

}  // namespace
}  // namespace covergen
