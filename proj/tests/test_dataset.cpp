/**
 * @file test_dataset.cpp
 * @brief Pair filtering, interleaving and segment packing.
 */

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "covergen/dataset.h"
#include "covergen/error.h"
#include "covergen/synth.h"
#include "test_support.h"

namespace covergen {
namespace {

class DatasetTest : public ::testing::Test {
 protected:
  Vocabulary vocab;

  // Sequence of empty bars whose condition blocks have the given row counts.
  InterleavedSequence sized(const std::vector<int>& rows) const {
    InterleavedSequence s;
    s.id = "sized";
    for (std::size_t b = 0; b < rows.size(); ++b) {
      const int bar = static_cast<int>(b);
      s.elements.push_back({ElementKind::kCondition, bar, bar, {0, 0}});
      ConditionBlock blk;
      blk.bar_index = bar;
      blk.rows = rows[b];
      blk.values.assign(static_cast<std::size_t>(rows[b]) * blk.dims, 0.0f);
      s.blocks.push_back(blk);
      s.elements.push_back({ElementKind::kTarget, bar, -1, {s.token_ids.size(), s.token_ids.size() + 2}});
      s.token_ids.push_back(vocab.bar_start());
      s.token_ids.push_back(vocab.bar_end());
    }
    return s;
  }
};

TEST_F(DatasetTest, FilterThresholds) {
  EXPECT_EQ(filter_pair(0.04, 0.10), (FilterDecision{false, "low-mca"}));
  EXPECT_EQ(filter_pair(0.30, 0.20), (FilterDecision{false, "length"}));
  EXPECT_EQ(filter_pair(0.30, 0.05), (FilterDecision{true, ""}));
  EXPECT_TRUE(filter_pair(0.05, 0.15).keep);
}

TEST_F(DatasetTest, FilterIsOrderIndependent) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 0.3);
  std::vector<std::pair<double, double>> corpus(200);
  for (auto& p : corpus) p = {u(rng), u(rng)};
  auto kept = [&](const std::vector<std::pair<double, double>>& c) {
    std::vector<std::pair<double, double>> k;
    for (const auto& p : c) {
      if (filter_pair(p.first, p.second).keep) k.push_back(p);
    }
    std::sort(k.begin(), k.end());
    return k;
  };
  const auto base = kept(corpus);
  for (int r = 0; r < 5; ++r) {
    std::shuffle(corpus.begin(), corpus.end(), rng);
    EXPECT_EQ(kept(corpus), base);
  }
}

TEST_F(DatasetTest, TwoBarOrdering) {
  const auto seq = test::synth_sequence(vocab, 2, 5);
  validate(seq, vocab);
  ASSERT_EQ(seq.elements.size(), 6u);  // two closed bars plus the open tail bar
  const ElementKind want[] = {ElementKind::kCondition, ElementKind::kTarget};
  for (std::size_t i = 0; i < seq.elements.size(); ++i) {
    EXPECT_EQ(seq.elements[i].kind, want[i % 2]);
    EXPECT_EQ(seq.elements[i].bar_index, static_cast<int>(i / 2));
  }
  EXPECT_EQ(seq.kind, SequenceKind::kPianoOnly);
}

TEST_F(DatasetTest, PianoOnlyUsesOwnFeatures) {
  SynthOptions o;
  o.render_audio = false;
  const auto p = synth_piece("own", o, 6);
  const PianoOnlyRecord rec{p.id, p.piano, p.piano_grid, chroma_from_midi(p.piano)};
  const auto seq = build_interleaved(rec, vocab);
  const auto bars = bars_from_grid(p.piano_grid);
  for (std::size_t b = 0; b < 4; ++b) {
    EXPECT_EQ(seq.blocks[b], extract_condition_features(rec.features, rec.grid, bars[b]));
  }
  EXPECT_EQ(seq.token_ids, encode(p.piano, p.piano_grid, vocab, extract_chords(p.piano, p.piano_grid)).ids);
}

TEST_F(DatasetTest, PairedDropsInvalidBar) {
  SynthOptions o;
  o.bars = 4;
  o.flat_bars = {1};
  o.render_audio = false;
  const auto p = synth_piece("flat", o, 7);
  const auto pair =
      build_weak_pair(p.piano, chroma_from_midi(p.song_notes), p.warp, p.piano_grid, p.song_grid, vocab);
  const auto seq = build_interleaved(pair);
  validate(seq, vocab);
  std::vector<int> bars;
  for (const auto& e : seq.elements) {
    if (e.kind == ElementKind::kTarget) bars.push_back(e.bar_index);
  }
  EXPECT_EQ(bars, (std::vector<int>{0, 2, 3}));
  EXPECT_EQ(seq.kind, SequenceKind::kPaired);
}

TEST_F(DatasetTest, NoValidBarsThrows) {
  WeakAlignedPair empty;
  EXPECT_THROW(build_interleaved(empty), Error);
}

TEST_F(DatasetTest, ValidateRejectsBadOrder) {
  auto seq = sized({3, 3});
  std::swap(seq.elements[0], seq.elements[1]);
  EXPECT_THROW(validate(seq, vocab), Error);
}

TEST_F(DatasetTest, SingleSegmentWhenItFits) {
  const auto seq = sized({400, 497});  // 1 + 402 + 499 = 902 slots
  const auto segs = segment(seq, vocab, 1024);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs[0].slots.size(), seq.total_slots());
  EXPECT_EQ(segs[0].slots[0].token, vocab.bos());
}

TEST_F(DatasetTest, PackingSplitsOnBarBoundary) {
  const auto seq = sized({997, 497});  // bar 0 ends at slot 1000
  const auto segs = segment(seq, vocab, 1024);
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[0].slots.size(), 1000u);
  EXPECT_EQ(segs[1].slots.size(), 500u);
  EXPECT_EQ(segs[1].slots[0].token, vocab.ss());
  EXPECT_EQ(segs[1].first_bar, 1);
}

TEST_F(DatasetTest, OversizedBarThrows) {
  EXPECT_THROW(segment(sized({1100}), vocab, 1024), Error);
}

TEST_F(DatasetTest, MaskConservationProperty) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> len(80, 400);
  for (int trial = 0; trial < 20; ++trial) {
    const auto seq = test::synth_sequence(vocab, 1 + trial % 6, 100 + trial);
    std::size_t targets = 0;
    for (const auto& e : seq.elements) {
      if (e.kind == ElementKind::kTarget) targets += e.span.second - e.span.first;
    }
    const auto segs = segment(seq, vocab, len(rng));
    std::size_t masked = 0;
    for (const auto& s : segs) {
      masked += s.target_count();
      for (std::size_t k = 0; k < s.slots.size(); ++k) {
        EXPECT_EQ(static_cast<bool>(s.loss_mask[k]), !s.slots[k].is_condition() && k > 0);
      }
      // Each segment starts with a marker followed by a condition block.
      ASSERT_GE(s.slots.size(), 2u);
      EXPECT_TRUE(s.slots[1].is_condition());
    }
    EXPECT_EQ(masked, targets);
  }
}

}  // namespace
}  // namespace covergen
