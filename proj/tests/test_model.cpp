/**
 * @file test_model.cpp
 * @brief Decoder forward pass, loss, gradients, training and generation.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "covergen/error.h"
#include "covergen/model.h"
#include "test_support.h"

namespace covergen {
namespace {

namespace fs = std::filesystem;

class ModelTest : public ::testing::Test {
 protected:
  Vocabulary vocab;
  ModelConfig cfg = test::toy_config(vocab);

  // First slot index of each condition block.
  static std::vector<std::size_t> block_starts(const TrainingSegment& s) {
    std::vector<std::size_t> out;
    for (std::size_t t = 0; t < s.slots.size(); ++t) {
      if (s.slots[t].is_condition() && s.slots[t].row == 0) out.push_back(t);
    }
    return out;
  }

  Corpus tiny_corpus(int n) const {
    Corpus c;
    for (int i = 0; i < n; ++i) {
      c.piano_only.push_back(test::small_segment(vocab, 2, 10 + i));
      auto paired = test::small_segment(vocab, 2, 50 + i);
      paired.kind = SequenceKind::kPaired;
      c.paired.push_back(paired);
    }
    return c;
  }

  TrainConfig quick(int steps) const {
    TrainConfig tc;
    tc.steps = steps;
    tc.batch_size = 2;
    tc.learning_rate = 3e-3;
    tc.seed = 9;
    return tc;
  }
};

TEST_F(ModelTest, ConfigValidation) {
  ModelConfig bad = cfg;
  bad.n_heads = 3;
  EXPECT_THROW(bad.validate(), Error);
  bad = cfg;
  bad.adapter.d_model = 8;
  EXPECT_THROW(bad.validate(), Error);
  EXPECT_EQ(config_hash(cfg), config_hash(test::toy_config(vocab)));
  EXPECT_NE(config_hash(cfg), config_hash(ModelConfig{}));
  EXPECT_EQ(config_hash(cfg).size(), 16u);
}

TEST_F(ModelTest, LogitsShape) {
  const auto p = init_model<float>(cfg, 1);
  const auto seg = test::small_segment(vocab, 2, 3);
  const auto logits = forward(p, cfg, seg);
  EXPECT_EQ(logits.rows(), static_cast<Eigen::Index>(seg.slots.size()));
  EXPECT_EQ(logits.cols(), vocab.size());
  EXPECT_EQ(logits.row(0).cwiseAbs().maxCoeff(), 0.0f);
}

TEST_F(ModelTest, PositionOverflowThrows) {
  ModelConfig small = cfg;
  small.max_positions = 8;
  const auto p = init_model<float>(small, 1);
  try {
    forward(p, small, test::small_segment(vocab, 2, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOutOfRange);
  }
}

TEST_F(ModelTest, UniformLogitsGiveLogV) {
  const int V = 37;
  Matrix<double> logits = Matrix<double>::Zero(5, V);
  const std::vector<int> y{0, 3, 5, 7, 36};
  EXPECT_NEAR(masked_cross_entropy(logits, y, {false, true, true, true, true}), std::log(V), 1e-12);
  EXPECT_THROW(masked_cross_entropy(logits, y, std::vector<bool>(5, false)), Error);
}

TEST_F(ModelTest, ConfidentLogitsGiveZeroLoss) {
  Matrix<double> logits = Matrix<double>::Zero(3, 10);
  for (int t = 0; t < 3; ++t) logits(t, t) = 100.0;
  EXPECT_LT(masked_cross_entropy(logits, {0, 1, 2}, {true, true, true}), 1e-30);
}

TEST_F(ModelTest, MaskedRowsGetNoGradient) {
  const auto p = init_model<double>(cfg, 2);
  const auto seg = test::small_segment(vocab, 2, 4);
  const auto logits = forward(p, cfg, seg);
  Matrix<double> d;
  masked_cross_entropy(logits, slot_targets(seg), seg.loss_mask, &d);
  for (std::size_t t = 0; t < seg.slots.size(); ++t) {
    if (seg.slots[t].is_condition() || !seg.loss_mask[t]) {
      EXPECT_EQ(d.row(static_cast<Eigen::Index>(t)).cwiseAbs().maxCoeff(), 0.0) << "slot " << t;
    }
  }
}

TEST_F(ModelTest, GradientMatchesFiniteDifferences) {
  auto p = test::gradcheck_params(cfg, 3);
  const auto seg = test::small_segment(vocab, 2, 5, 2);
  EXPECT_LT(test::gradcheck(p, cfg, seg), 1e-4);
}

TEST_F(ModelTest, GradientWithoutBias) {
  ModelConfig nb = cfg;
  nb.bias = false;
  nb.adapter.bias = false;
  auto p = test::gradcheck_params(nb, 4);
  const auto seg = test::small_segment(vocab, 1, 6, 2);
  EXPECT_LT(test::gradcheck(p, nb, seg), 1e-4);
}

TEST_F(ModelTest, FutureConditionBlockCannotLeak) {
  const auto p = init_model<double>(cfg, 5);
  const auto seg = test::small_segment(vocab, 3, 7);
  const auto starts = block_starts(seg);
  ASSERT_EQ(starts.size(), 3u);
  const auto base = forward(p, cfg, seg);
  for (std::size_t m = 1; m < 3; ++m) {
    auto pert = seg;
    for (float& v : pert.blocks[m].values) v += 0.7f;
    const auto out = forward(p, cfg, pert);
    // Rows up to and including the block's first slot see only earlier slots.
    const auto keep = static_cast<Eigen::Index>(starts[m] + 1);
    EXPECT_EQ(out.topRows(keep), base.topRows(keep)) << "block " << m;
    EXPECT_GT(test::max_abs_diff(out, base), 0.0);
  }
}

TEST_F(ModelTest, FutureTokensCannotLeak) {
  const auto p = init_model<double>(cfg, 6);
  const auto seg = test::small_segment(vocab, 2, 8);
  const auto starts = block_starts(seg);
  // Change the Bar_end of bar 1 and everything up to it is unaffected.
  auto pert = seg;
  const std::size_t last = seg.slots.size() - 1;
  pert.slots[last].token = vocab.bar_start();
  const auto a = forward(p, cfg, seg), b = forward(p, cfg, pert);
  EXPECT_EQ(a.topRows(static_cast<Eigen::Index>(last + 1)), b.topRows(static_cast<Eigen::Index>(last + 1)));
  // Rows up to the changed slot of bar 1 are intact.
  auto early = seg;
  early.slots[starts[1] + 5].token = vocab.id({TokenClass::kPitch, 21});
  const auto c = forward(p, cfg, early);
  const auto keep = static_cast<Eigen::Index>(starts[1] + 6);
  EXPECT_EQ(c.topRows(keep), a.topRows(keep));
}

TEST_F(ModelTest, LossGradientIgnoresFutureBlocks) {
  // d(loss restricted to bar 0) / d(block 1) is exactly zero.
  auto p = init_model<double>(cfg, 7);
  auto seg = test::small_segment(vocab, 2, 9);
  const auto starts = block_starts(seg);
  for (std::size_t t = starts[1]; t < seg.slots.size(); ++t) seg.loss_mask[t] = false;
  ModelParams<double> none;
  const double base = loss_and_grad<double>(p, cfg, seg, 0.0, none);
  for (int k = 0; k < 5; ++k) {
    auto pert = seg;
    pert.blocks[1].values[static_cast<std::size_t>(k * 7)] += 1e-3f;
    EXPECT_EQ(loss_and_grad<double>(p, cfg, pert, 0.0, none), base);
  }
}

TEST_F(ModelTest, FinetuneLossEndpoints) {
  EXPECT_EQ(finetune_loss(2.0, 1.0, 0.25), 1.25);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int i = 0; i < 100; ++i) {
    const double a = u(rng), b = u(rng);
    EXPECT_EQ(finetune_loss(a, b, 1.0), a);
    EXPECT_EQ(finetune_loss(a, b, 0.0), b);
  }
  EXPECT_THROW(finetune_loss(1, 1, 1.5), Error);
  EXPECT_THROW(finetune_loss(1, 1, -0.1), Error);
}

TEST_F(ModelTest, StageNames) {
  EXPECT_EQ(parse_stage("pretrain"), Stage::kPretrain);
  EXPECT_EQ(parse_stage("finetuned"), Stage::kFinetune);
  EXPECT_THROW(parse_stage("warmup"), Error);
}

TEST_F(ModelTest, TrainingReducesLoss) {
  const auto corpus = tiny_corpus(2);
  const auto r = train(Stage::kPretrain, corpus, cfg, quick(60));
  ASSERT_EQ(r.losses.size(), 60u);
  EXPECT_LT(r.losses.back(), r.losses.front() * 0.5);
  EXPECT_EQ(r.checkpoint.stage, Stage::kPretrain);
  EXPECT_EQ(r.checkpoint.step, 60);
}

TEST_F(ModelTest, DeterministicTraining) {
  const auto corpus = tiny_corpus(3);
  auto tc = quick(15);
  ModelConfig drop = cfg;
  drop.dropout = 0.1;
  const auto a = train(Stage::kPretrain, corpus, drop, tc);
  const auto b = train(Stage::kPretrain, corpus, drop, tc);
  EXPECT_EQ(a.losses, b.losses);
  auto pa = a.checkpoint.params, pb = b.checkpoint.params;
  auto ta = pa.tensors(), tb = pb.tensors();
  for (std::size_t k = 0; k < ta.size(); ++k) EXPECT_EQ(*ta[k].value, *tb[k].value) << ta[k].name;
  tc.seed = 10;
  EXPECT_NE(train(Stage::kPretrain, corpus, drop, tc).losses, a.losses);
}

TEST_F(ModelTest, FinetuneRequiresPretrainedInit) {
  const auto corpus = tiny_corpus(2);
  try {
    train(Stage::kFinetune, corpus, cfg, quick(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kState);
  }
  auto tc = quick(1);
  tc.allow_scratch_finetune = true;
  EXPECT_NO_THROW(train(Stage::kFinetune, corpus, cfg, tc));
}

TEST_F(ModelTest, StageAndConfigChecks) {
  const auto corpus = tiny_corpus(2);
  const auto pre = train(Stage::kPretrain, corpus, cfg, quick(2));
  const auto fin = train(Stage::kFinetune, corpus, cfg, quick(2), pre.checkpoint);
  EXPECT_EQ(fin.checkpoint.stage, Stage::kFinetune);
  EXPECT_THROW(train(Stage::kPretrain, corpus, cfg, quick(1), fin.checkpoint), Error);
  ModelConfig other = cfg;
  other.ffn_dim = 48;
  EXPECT_THROW(train(Stage::kFinetune, corpus, other, quick(1), pre.checkpoint), Error);
}

TEST_F(ModelTest, AlphaOneIgnoresPairedLoss) {
  const auto corpus = tiny_corpus(2);
  const auto pre = train(Stage::kPretrain, corpus, cfg, quick(3));
  auto tc = quick(5);
  tc.alpha = 1.0;
  const auto a = train(Stage::kFinetune, corpus, cfg, tc, pre.checkpoint);
  // Replacing the paired corpus cannot change the update when alpha is 1.
  Corpus swapped = corpus;
  for (auto& s : swapped.paired) s = test::small_segment(vocab, 2, 999);
  const auto b = train(Stage::kFinetune, swapped, cfg, tc, pre.checkpoint);
  auto pa = a.checkpoint.params, pb = b.checkpoint.params;
  auto ta = pa.tensors(), tb = pb.tensors();
  for (std::size_t k = 0; k < ta.size(); ++k) EXPECT_EQ(*ta[k].value, *tb[k].value);
}

TEST_F(ModelTest, PairedOnlyFinetuneUsesL2) {
  Corpus corpus = tiny_corpus(2);
  corpus.piano_only.clear();
  auto tc = quick(1);
  tc.allow_scratch_finetune = true;
  const auto r = train(Stage::kFinetune, corpus, cfg, tc);
  const auto e = evaluate(r.checkpoint, corpus, Stage::kFinetune, 0.25);
  EXPECT_EQ(e.loss, e.l2);
}

TEST_F(ModelTest, CheckpointRoundTrip) {
  const auto corpus = tiny_corpus(2);
  auto tc = quick(3);
  const auto r = train(Stage::kPretrain, corpus, cfg, tc);
  const fs::path dir = fs::temp_directory_path() / "covergen_ck_test";
  fs::remove_all(dir);
  save_checkpoint(r.checkpoint, dir / "ck");
  save_checkpoint(r.checkpoint, dir / "ck");  // overwrite in place
  const auto back = load_checkpoint(dir / "ck", cfg);
  EXPECT_EQ(back.step, 3);
  EXPECT_EQ(back.stage, Stage::kPretrain);
  ASSERT_TRUE(back.optimizer.has_value());
  EXPECT_EQ(back.optimizer->step, 3);
  for (const auto& seg : corpus.piano_only) {
    EXPECT_EQ(forward(back.params, cfg, seg), forward(r.checkpoint.params, cfg, seg));
  }
  ModelConfig other = cfg;
  other.dropout = 0.2;
  try {
    load_checkpoint(dir / "ck", other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kState);
  }
  EXPECT_FALSE(fs::exists(dir / "ck.tmp"));
  fs::remove_all(dir);
}

TEST_F(ModelTest, ResumeContinuesOptimizer) {
  const auto corpus = tiny_corpus(2);
  const auto a = train(Stage::kPretrain, corpus, cfg, quick(4));
  const auto b = train(Stage::kPretrain, corpus, cfg, quick(4), a.checkpoint);
  EXPECT_EQ(b.checkpoint.step, 8);
  EXPECT_EQ(b.checkpoint.optimizer->step, 8);
}

TEST_F(ModelTest, GenerateEmptyAndMismatch) {
  ModelCheckpoint ck;
  ck.config = cfg;
  ck.params = init_model<float>(cfg, 1);
  EXPECT_TRUE(generate(ck, vocab, {}).ids.empty());
  VocabConfig vc;
  vc.tempo_bins = 32;
  try {
    std::mt19937_64 rng(1);
    generate(ck, Vocabulary(vc), {test::random_block(rng, 0)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kState);
  }
}

TEST_F(ModelTest, GeneratedBarsAreWellFormed) {
  ModelCheckpoint ck;
  ck.config = cfg;
  ck.config.max_positions = 64;  // forces context restarts
  ck.params = init_model<float>(ck.config, 2);
  std::mt19937_64 rng(3);
  std::vector<ConditionBlock> blocks;
  for (int b = 0; b < 6; ++b) blocks.push_back(test::random_block(rng, b, 3 + b % 3));
  const BeatGrid grid = test::constant_grid(120.0, 6 * 4 + 1);
  for (double temp : {0.0, 0.7, 1.0, 3.0}) {
    for (int cap : {4, 9, 40, 256}) {
      SamplingConfig sc;
      sc.temperature = temp;
      sc.top_p = temp > 2 ? 1.0 : 0.9;
      sc.max_tokens_per_bar = cap;
      sc.seed = 11;
      const auto seq = generate(ck, vocab, blocks, sc);
      ASSERT_EQ(seq.bar_spans.size(), blocks.size());
      EXPECT_NO_THROW(validate_structure(seq, vocab));
      for (const auto& [a, b] : seq.bar_spans) EXPECT_LE(b - a, static_cast<std::size_t>(std::min(cap, 64)));
      EXPECT_NO_THROW(decode(seq, grid, vocab));
    }
  }
}

TEST_F(ModelTest, GreedyGenerationIsDeterministic) {
  ModelCheckpoint ck;
  ck.config = cfg;
  ck.params = init_model<float>(cfg, 4);
  std::mt19937_64 rng(5);
  std::vector<ConditionBlock> blocks{test::random_block(rng, 0), test::random_block(rng, 1)};
  SamplingConfig sc;
  sc.temperature = 1.0;
  sc.seed = 3;
  EXPECT_EQ(generate(ck, vocab, blocks, sc), generate(ck, vocab, blocks, sc));
}

}  // namespace
}  // namespace covergen
