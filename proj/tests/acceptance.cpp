// Acceptance suite: runs the eleven acceptance criteria and prints one
// PASS/FAIL line each. Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "covergen/alignment.h"
#include "covergen/beat_align.h"
#include "covergen/dataset.h"
#include "covergen/error.h"
#include "covergen/io.h"
#include "covergen/metrics.h"
#include "covergen/model.h"
#include "covergen/stats.h"
#include "covergen/synth.h"
#include "test_support.h"

using namespace covergen;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// 1 ------------------------------------------------------------------------
Outcome codec_round_trip() {
  const auto t0 = Clock::now();
  const Vocabulary vocab;
  std::mt19937_64 rng(1001);
  int bad = 0;
  std::size_t notes = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const BeatGrid g = test::random_grid(rng, 1 + trial % 8);
    const auto perf = test::random_quantized(rng, g, vocab, 40);
    const auto seq = encode(perf, g, vocab);
    validate_structure(seq, vocab);
    const auto back = decode(seq, g, vocab);
    notes += perf.notes.size();
    bool ok = back.notes.size() == perf.notes.size();
    for (std::size_t i = 0; ok && i < perf.notes.size(); ++i) {
      const auto& a = perf.notes[i];
      const auto& b = back.notes[i];
      const long long on_a = nearest_subdivision(a.onset, g), on_b = nearest_subdivision(b.onset, g);
      ok = a.pitch == b.pitch && on_a == on_b &&
           nearest_subdivision(a.offset(), g) - on_a == nearest_subdivision(b.offset(), g) - on_b &&
           vocab.velocity_bin(a.velocity) == vocab.velocity_bin(b.velocity) &&
           b.onset == g.subdivision_time(on_a);
    }
    bad += !ok;
  }
  const double t = seconds_since(t0);
  return {bad == 0 && t < 10.0, fmt("1000 performances (%zu notes), %d mismatches, %.2fs", notes, bad, t)};
}

// 2 ------------------------------------------------------------------------
double brute_force_cost(const std::vector<double>& c, int rows, int cols) {
  double best = std::numeric_limits<double>::infinity();
  std::function<void(int, int, double)> walk = [&](int i, int j, double acc) {
    acc += c[static_cast<std::size_t>(i) * cols + j];
    if (i == rows - 1 && j == cols - 1) {
      best = std::min(best, acc);
      return;
    }
    for (const auto& s : kWarpSteps) {
      if (i + s.i < rows && j + s.j < cols) walk(i + s.i, j + s.j, acc);
    }
  };
  walk(0, 0, 0.0);
  return best;
}

Outcome dtw_optimality() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2002);
  std::uniform_int_distribution<int> len(1, 8);
  int checked = 0, bad = 0, skipped = 0;
  while (checked < 200) {
    const auto a = test::random_features(rng, len(rng));
    const auto b = test::random_features(rng, len(rng));
    const auto c = cost_matrix(a, b);
    const double oracle = brute_force_cost(c, a.frames, b.frames);
    if (!std::isfinite(oracle)) {
      // No admissible path for this shape; dtw must report it.
      try {
        dtw_path(a, b);
        ++bad;
      } catch (const Error& e) {
        bad += e.code() != ErrorCode::kInfeasible;
      }
      ++skipped;
      continue;
    }
    const auto p = dtw_path(a, b);
    validate(p, a.frames, b.frames);
    bad += p.cost != oracle;
    ++checked;
  }
  const double t = seconds_since(t0);
  return {bad == 0 && t < 30.0,
          fmt("200 feasible pairs (+%d infeasible shapes rejected), %d disagreements, %.2fs", skipped, bad, t)};
}

// 3 ------------------------------------------------------------------------
Outcome beat_align_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(3003);
  int bad = 0, non_monotone = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const BeatGrid p = test::random_grid(rng, 2 + trial % 5);
    const BeatGrid s = test::random_grid(rng, 2 + (trial / 5) % 7);
    const auto m = test::random_monotone_map(rng, p.beat_times().back());
    const auto a = beat_align(m, p, s);
    for (int i = 0; i < p.count(); ++i) {
      const double x = m(p.beat_times()[i]);
      int best = 0;
      for (int j = 1; j < s.count(); ++j) {
        if (std::abs(x - s.beat_times()[j]) < std::abs(x - s.beat_times()[best])) best = j;
      }
      bad += a.mapping[i] != best;
    }
    non_monotone += !a.is_monotone();
  }
  const double t = seconds_since(t0);
  return {bad == 0 && non_monotone == 0 && t < 10.0,
          fmt("500 maps, %d argmin mismatches, %d non-monotone, %.2fs", bad, non_monotone, t)};
}

// 4 ------------------------------------------------------------------------
Outcome invalid_bar_detection() {
  std::mt19937_64 rng(4004);
  std::bernoulli_distribution flat(0.5);
  std::uniform_real_distribution<double> warp(0.85, 1.3);
  int fp = 0, fn = 0, total_flat = 0, total_bars = 0;
  for (int k = 0; k < 30; ++k) {
    SynthOptions o;
    o.bars = 8;
    o.warp = warp(rng);
    o.render_audio = false;
    for (int b = 0; b < o.bars; ++b) {
      if (flat(rng)) o.flat_bars.insert(b);
    }
    const auto piece = synth_piece("flat" + std::to_string(k), o, 400 + k);
    const auto a = beat_align(piece.warp, piece.piano_grid, piece.song_grid);
    std::vector<Bar> closed;
    for (const auto& b : bars_from_grid(piece.piano_grid)) {
      if (b.end_beat < piece.piano_grid.count()) closed.push_back(b);
    }
    const auto found = find_invalid_bars(a, closed);
    for (int b : found) fp += !o.flat_bars.count(b);
    for (int b : o.flat_bars) fn += !found.count(b);
    total_flat += static_cast<int>(o.flat_bars.size());
    total_bars += static_cast<int>(closed.size());
  }
  return {fp == 0 && fn == 0,
          fmt("30 pieces, %d/%d bars flat, %d false positives, %d false negatives", total_flat, total_bars, fp, fn)};
}

// 5 ------------------------------------------------------------------------
Outcome weak_vs_strong() {
  const Vocabulary vocab;
  double worst_weak = 0.0;
  std::vector<double> strong;
  for (int k = 0; k < 8; ++k) {
    SynthOptions o;
    o.bars = 6;
    o.render_audio = false;
    const auto piece = synth_piece("ioi" + std::to_string(k), o, 500 + k);
    const double len = piece.piano.length;
    const TimeMap stretch = TimeMap::linear(1.14, len);
    std::vector<double> song_beats;
    for (double b : piece.piano_grid.beat_times()) song_beats.push_back(1.14 * b);
    const BeatGrid song_grid(song_beats, piece.piano_grid.downbeat_indices());
    const auto pair = build_weak_pair(piece.piano, chroma_from_midi(piece.song_notes), stretch, piece.piano_grid,
                                      song_grid, vocab);
    worst_weak = std::max(worst_weak, std::abs(ioi_deviation(piece.piano, pair.piano) - 1.0));
    strong.push_back(ioi_deviation(piece.piano, remap_notes(piece.piano, stretch, song_grid)));
  }
  const auto ms = mean_std(strong);
  bool strong_ok = true;
  for (double s : strong) strong_ok = strong_ok && std::abs(s - 1.14) <= 0.01;
  return {worst_weak == 0.0 && strong_ok,
          fmt("weak ioi_deviation = %.3f on 8 pieces; strong (1.14x warp) = %s", 1.0 + worst_weak,
              format_mean_std(ms, 3).c_str())};
}

// 6 ------------------------------------------------------------------------
Outcome metric_oracles() {
  std::vector<std::string> failed;
  auto check = [&](bool ok, const char* name) {
    if (!ok) failed.emplace_back(name);
  };
  MelodyContour x{{60.0, 62.5, std::nullopt, 67.0, 71.0}, 100.0};
  auto shift = [&](double d) {
    auto y = x;
    for (auto& p : y.pitches) if (p) *p += d;
    return y;
  };
  check(mca(x, x) == 1.0, "mca(x,x)");
  check(mca(x, shift(12)) == 1.0, "mca +12");
  check(mca(x, shift(1)) == 0.0, "mca +1");
  check(std::abs(pitch_class_entropy(std::vector<int>(12, 5)) - std::log2(12.0)) <= 1e-9, "H4 uniform");
  std::vector<BarNotes> uni(4);
  for (int b = 0; b < 4; ++b) {
    for (int k = 0; k < 3; ++k) uni[b].notes.push_back({60 + 3 * b + k, 0});
  }
  check(std::abs(pitch_class_entropy_4(uni) - std::log2(12.0)) <= 1e-9, "H4 uniform windows");
  std::vector<BarNotes> one(4);
  for (auto& b : one) b.notes = {{60, 0}, {72, 4}};
  check(pitch_class_entropy_4(one) == 0.0, "H4 single class");
  GrooveVector a{}, c{};
  c.fill(true);
  GrooveVector d = a;
  d[3] = true;
  check(grooving_similarity(a, a) == 1.0, "GS identical");
  check(grooving_similarity(a, c) == 0.0, "GS complementary");
  check(grooving_similarity(a, d) == 0.9375, "GS one bit");
  std::string f;
  for (const auto& s : failed) f += " " + s;
  return {failed.empty(), failed.empty() ? "mca, H4 and GS oracles exact" : "failed:" + f};
}

// 7 ------------------------------------------------------------------------
Outcome loss_and_gradient() {
  const Vocabulary vocab;
  const ModelConfig cfg = test::toy_config(vocab, 16, 2);
  auto p = test::gradcheck_params(cfg, 77);
  const auto seg = test::small_segment(vocab, 2, 78, 2);
  const double rel = test::gradcheck(p, cfg, seg);

  // Zero gradient on condition rows of the logits.
  const auto logits = forward(p, cfg, seg);
  Matrix<double> dl;
  masked_cross_entropy(logits, slot_targets(seg), seg.loss_mask, &dl);
  double cond_grad = 0.0;
  for (std::size_t t = 0; t < seg.slots.size(); ++t) {
    if (seg.slots[t].is_condition()) cond_grad = std::max(cond_grad, dl.row(static_cast<Eigen::Index>(t)).cwiseAbs().maxCoeff());
  }

  // Perturbing block m > k leaves every logit at bars <= k unchanged.
  const auto seg3 = test::small_segment(vocab, 3, 79);
  std::vector<std::size_t> starts;
  for (std::size_t t = 0; t < seg3.slots.size(); ++t) {
    if (seg3.slots[t].is_condition() && seg3.slots[t].row == 0) starts.push_back(t);
  }
  const auto base = forward(p, cfg, seg3);
  int leaks = 0;
  for (std::size_t m = 1; m < starts.size(); ++m) {
    auto pert = seg3;
    for (float& v : pert.blocks[m].values) v = -v + 0.5f;
    const auto out = forward(p, cfg, pert);
    // Bars before m end right before block m; row starts[m] is predicted from them alone.
    const auto keep = static_cast<Eigen::Index>(starts[m] + 1);
    leaks += !(out.topRows(keep) == base.topRows(keep));
  }
  return {rel < 1e-4 && cond_grad == 0.0 && leaks == 0,
          fmt("max rel err %.2e over %zu params, condition-row grad %.1e, %d causal leaks", rel,
              p.parameter_count(), cond_grad, leaks)};
}

// 8 ------------------------------------------------------------------------
Outcome finetune_endpoints() {
  std::mt19937_64 rng(8008);
  std::uniform_real_distribution<double> u(0.0, 12.0);
  int bad = 0;
  for (int i = 0; i < 10000; ++i) {
    const double l1 = u(rng), l2 = u(rng);
    bad += finetune_loss(l1, l2, 1.0) != l1;
    bad += finetune_loss(l1, l2, 0.0) != l2;
    const long double ref = 0.25L * l1 + 0.75L * l2;
    const double got = finetune_loss(l1, l2, 0.25);
    const double r = static_cast<double>(ref);
    bad += std::abs(got - r) > std::abs(std::nextafter(r, 1e300) - r);
  }
  const bool example = finetune_loss(2.0, 1.0, 0.25) == 1.25;
  return {bad == 0 && example, fmt("10000 random (L1, L2): %d violations; (2, 1, 0.25) -> %.17g", bad,
                                   finetune_loss(2.0, 1.0, 0.25))};
}

// 9 ------------------------------------------------------------------------
Outcome pipeline_smoke() {
  const auto t0 = Clock::now();
  const Vocabulary vocab;
  Corpus corpus;
  std::vector<InterleavedSequence> paired;
  for (int k = 0; k < 8; ++k) {
    SynthOptions o;
    o.bars = 4;
    o.warp = 1.1;
    const auto p = synth_piece("piece" + std::to_string(k), o, 100 + k);
    const PianoOnlyRecord rec{p.id, p.piano, p.piano_grid, chroma_from_midi(p.piano)};
    for (auto& s : segment(build_interleaved(rec, vocab), vocab, 1024)) corpus.piano_only.push_back(std::move(s));
    const auto song = chromagram(p.song_audio.samples, p.song_audio.sample_rate);
    const auto map = time_map_from_path(dtw_path(chroma_from_midi(p.piano), song), song.frame_rate);
    auto pair = build_weak_pair(p.piano, song, map, p.piano_grid, p.song_grid, vocab);
    pair.id = p.id;
    paired.push_back(build_interleaved(pair));
    for (auto& s : segment(paired.back(), vocab, 1024)) corpus.paired.push_back(std::move(s));
  }
  ModelConfig mc;
  mc.d_model = 64;
  mc.n_layers = 2;
  mc.n_heads = 4;
  mc.ffn_dim = 256;
  mc.dropout = 0.0;
  mc.vocab_size = vocab.size();
  mc.max_positions = 256;
  mc.adapter = {kConditionFeatureDim, 64, 1, 4, true};
  TrainConfig tc;
  tc.learning_rate = 3e-3;
  tc.seed = 7;
  tc.steps = 400;
  const auto pre = train(Stage::kPretrain, corpus, mc, tc);
  tc.steps = 800;
  const auto fin = train(Stage::kFinetune, corpus, mc, tc, pre.checkpoint);
  const auto ev = evaluate(fin.checkpoint, corpus, Stage::kFinetune, tc.alpha);

  SamplingConfig greedy;
  greedy.temperature = 0.0;
  std::size_t match = 0, total = 0;
  int malformed = 0;
  for (const auto& seq : paired) {
    const auto g = generate(fin.checkpoint, vocab, seq.blocks, greedy);
    try {
      validate_structure(g, vocab);
      malformed += g.bar_spans.size() != seq.blocks.size();
    } catch (const Error&) {
      ++malformed;
      continue;
    }
    for (std::size_t b = 0; b < seq.blocks.size(); ++b) {
      const auto [a, e] = seq.elements[2 * b + 1].span;
      const auto [ga, ge] = g.bar_spans[b];
      for (std::size_t i = 0; i < e - a; ++i) {
        ++total;
        match += ga + i < ge && g.ids[ga + i] == seq.token_ids[a + i];
      }
    }
  }
  const double acc = total ? static_cast<double>(match) / static_cast<double>(total) : 0.0;
  const double t = seconds_since(t0);
  return {ev.loss < 0.1 && acc >= 0.95 && malformed == 0 && t < 600.0,
          fmt("final loss %.4f (L1 %.4f, L2 %.4f; last step %.4f), greedy match %.3f of %zu tokens, "
              "%d malformed sequences, %.0fs",
              ev.loss, ev.l1, ev.l2, fin.losses.back(), acc, total, malformed, t)};
}

// 10 -----------------------------------------------------------------------
Outcome dataset_filter() {
  const bool a = filter_pair(0.04, 0.10) == FilterDecision{false, "low-mca"};
  const bool b = filter_pair(0.30, 0.20) == FilterDecision{false, "length"};
  const bool c = filter_pair(0.30, 0.05) == FilterDecision{true, ""};
  std::mt19937_64 rng(1010);
  std::uniform_real_distribution<double> u(0.0, 0.3);
  std::vector<std::pair<double, double>> corpus(500);
  for (auto& p : corpus) p = {u(rng), u(rng)};
  auto kept = [](std::vector<std::pair<double, double>> c) {
    std::vector<std::pair<double, double>> k;
    for (const auto& p : c) {
      if (filter_pair(p.first, p.second).keep) k.push_back(p);
    }
    std::sort(k.begin(), k.end());
    return k;
  };
  const auto base = kept(corpus);
  int differ = 0;
  for (int r = 0; r < 20; ++r) {
    std::shuffle(corpus.begin(), corpus.end(), rng);
    differ += kept(corpus) != base;
  }
  return {a && b && c && differ == 0,
          fmt("examples %s/%s/%s, %d of 20 shuffles changed the kept set (%zu of 500 kept)", a ? "ok" : "FAIL",
              b ? "ok" : "FAIL", c ? "ok" : "FAIL", differ, base.size())};
}

// 11 -----------------------------------------------------------------------
Outcome determinism() {
  const Vocabulary vocab;
  ModelConfig cfg = test::toy_config(vocab, 16, 2);
  cfg.dropout = 0.1;
  Corpus corpus;
  for (int i = 0; i < 4; ++i) {
    corpus.piano_only.push_back(test::small_segment(vocab, 2, 1100 + i));
    auto s = test::small_segment(vocab, 2, 1200 + i);
    s.kind = SequenceKind::kPaired;
    corpus.paired.push_back(s);
  }
  TrainConfig tc;
  tc.steps = 20;
  tc.batch_size = 4;
  tc.learning_rate = 1e-3;
  tc.seed = 42;
  const fs::path root = fs::temp_directory_path() / "covergen_acceptance_det";
  fs::remove_all(root);
  std::vector<std::vector<double>> traj;
  std::vector<std::vector<std::uint8_t>> bytes;
  for (int run = 0; run < 2; ++run) {
    const auto pre = train(Stage::kPretrain, corpus, cfg, tc);
    const auto fin = train(Stage::kFinetune, corpus, cfg, tc, pre.checkpoint);
    auto losses = pre.losses;
    losses.insert(losses.end(), fin.losses.begin(), fin.losses.end());
    traj.push_back(losses);
    const fs::path dir = root / ("run" + std::to_string(run));
    save_checkpoint(fin.checkpoint, dir);
    auto b = read_bytes(dir / "params.bin");
    const auto o = read_bytes(dir / "optimizer.bin");
    b.insert(b.end(), o.begin(), o.end());
    bytes.push_back(b);
  }
  const bool manifests = read_json(root / "run0" / "manifest.json") == read_json(root / "run1" / "manifest.json");
  fs::remove_all(root);
  return {traj[0] == traj[1] && bytes[0] == bytes[1] && manifests,
          fmt("2 runs x %zu steps: trajectories %s, checkpoint bytes %s (%zu bytes), manifests %s", traj[0].size(),
              traj[0] == traj[1] ? "identical" : "DIFFER", bytes[0] == bytes[1] ? "identical" : "DIFFER",
              bytes[0].size(), manifests ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  const std::pair<const char*, Outcome (*)()> criteria[] = {
      {"codec round-trip", codec_round_trip},
      {"DTW optimality", dtw_optimality},
      {"beat alignment oracle", beat_align_oracle},
      {"invalid-bar detection", invalid_bar_detection},
      {"weak vs strong alignment", weak_vs_strong},
      {"metric oracles", metric_oracles},
      {"loss/gradient checks", loss_and_gradient},
      {"finetune loss endpoints", finetune_endpoints},
      {"two-stage pipeline smoke test", pipeline_smoke},
      {"dataset filter", dataset_filter},
      {"determinism", determinism},
  };
  int failures = 0, n = 0;
  for (const auto& [name, fn] : criteria) {
    ++n;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] %2d. %s: %s\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", n - failures, n);
  return failures == 0 ? 0 : 1;
}
