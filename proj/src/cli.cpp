#include "cli.h"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "covergen/alignment.h"
#include "covergen/beat_align.h"
#include "covergen/core.h"
#include "covergen/dataset.h"
#include "covergen/encoder.h"
#include "covergen/error.h"
#include "covergen/features.h"
#include "covergen/io.h"
#include "covergen/json_io.h"
#include "covergen/metrics.h"
#include "covergen/midi_file.h"
#include "covergen/model.h"
#include "covergen/remi.h"
#include "covergen/stats.h"
#include "covergen/synth.h"

namespace covergen::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Effective configuration: defaults < --config file < flags.
struct Settings {
  VocabConfig vocab;
  ChromaConfig chroma;
  ModelConfig model;
  TrainConfig train;
  SamplingConfig sampling;
  FilterConfig filter;
  int segment_len = 1024;
  std::uint64_t seed = 0;

  json to_json() const {
    return {{"vocab", vocab},     {"chroma", chroma}, {"model", model},           {"train", train},
            {"sampling", sampling}, {"filter", filter}, {"segment_len", segment_len}, {"seed", seed}};
  }
  std::string hash() const { return fnv1a_hex(to_json().dump()); }
};

Settings load_settings(const std::string& path) {
  Settings s;
  if (path.empty()) return s;
  json j;
  try {
    j = read_json(path);
  } catch (const Error& e) {
    throw Error(e.code() == ErrorCode::kIo ? ErrorCode::kIo : ErrorCode::kParse,
                "malformed config " + path + ": " + e.what(), e.offset());
  }
  if (!j.is_object()) throw Error(ErrorCode::kParse, "config must be a JSON object");
  static const std::set<std::string> known{"vocab",  "chroma", "model",       "train",
                                           "sampling", "filter", "segment_len", "seed"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw Error(ErrorCode::kParse, "unknown config key '" + k + "'");
  }
  try {
    if (j.contains("vocab")) s.vocab = j["vocab"].get<VocabConfig>();
    if (j.contains("chroma")) s.chroma = j["chroma"].get<ChromaConfig>();
    if (j.contains("model")) s.model = j["model"].get<ModelConfig>();
    if (j.contains("train")) s.train = j["train"].get<TrainConfig>();
    if (j.contains("sampling")) s.sampling = j["sampling"].get<SamplingConfig>();
    if (j.contains("filter")) s.filter = j["filter"].get<FilterConfig>();
    if (j.contains("segment_len")) s.segment_len = j["segment_len"].get<int>();
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("malformed config: ") + e.what());
  }
  return s;
}

struct Globals {
  std::string config;
  int jobs = 1;
  bool log_json = false;
};

class Logger {
 public:
  explicit Logger(bool as_json) : json_(as_json) {}
  void info(const std::string& msg, const json& fields = json::object()) const {
    std::lock_guard<std::mutex> lock(mu_);
    if (json_) {
      json j = fields;
      j["level"] = "info";
      j["msg"] = msg;
      std::cerr << j.dump() << '\n';
    } else {
      std::cerr << msg;
      for (const auto& [k, v] : fields.items()) std::cerr << ' ' << k << '=' << v.dump();
      std::cerr << '\n';
    }
  }

 private:
  bool json_;
  mutable std::mutex mu_;
};

// Runs fn(i) for i in [0, n) on up to `jobs` threads; results keep index order.
template <typename R>
std::vector<R> parallel_map(std::size_t n, int jobs, const std::function<R(std::size_t)>& fn) {
  std::vector<std::optional<R>> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int t = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  std::vector<std::thread> pool;
  for (int k = 1; k < t; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<R> r;
  r.reserve(n);
  for (auto& o : out) r.push_back(std::move(*o));
  return r;
}

json with_provenance(json j, const Settings& s) {
  j["provenance"] = provenance(s.hash());
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  const std::string tmp = path.string() + ".tmp";
  write_bytes(tmp, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  fs::rename(tmp, path);
}

// Pair manifest -------------------------------------------------------------

struct PairEntry {
  std::string id;
  fs::path piano, piano_beats, song, song_features, song_beats, reference;
};

std::vector<PairEntry> read_manifest(const fs::path& path) {
  const fs::path base = path.parent_path();
  auto resolve = [&](const json& j, const char* key) -> fs::path {
    if (!j.contains(key) || j[key].is_null()) return {};
    const fs::path p = j[key].get<std::string>();
    return p.is_absolute() ? p : base / p;
  };
  std::vector<PairEntry> out;
  std::size_t line = 0;
  for (const auto& j : read_jsonl(path)) {
    ++line;
    if (!j.contains("id") || !j.contains("piano") || !j.contains("piano_beats")) {
      throw Error(ErrorCode::kParse, "manifest record needs id, piano and piano_beats", line - 1);
    }
    PairEntry e{j["id"].get<std::string>(), resolve(j, "piano"),        resolve(j, "piano_beats"),
                resolve(j, "song"),         resolve(j, "song_features"), resolve(j, "song_beats"),
                resolve(j, "reference")};
    if ((!e.song.empty() || !e.song_features.empty()) && e.song_beats.empty()) {
      throw Error(ErrorCode::kParse, "record '" + e.id + "' has a song but no song_beats", line - 1);
    }
    out.push_back(std::move(e));
  }
  return out;
}

struct SongData {
  FeatureMatrix features;
  double length = 0.0;
};

SongData load_song(const PairEntry& e, const ChromaConfig& chroma) {
  SongData s;
  if (!e.song_features.empty()) {
    s.features = read_features(e.song_features);
    s.length = s.features.frames / s.features.frame_rate;
  } else {
    const PcmBuffer pcm = read_wav(e.song);
    s.features = chromagram(pcm.samples, pcm.sample_rate, chroma);
    s.length = static_cast<double>(pcm.samples.size()) / pcm.sample_rate;
  }
  return s;
}

MelodyContour load_reference(const fs::path& path) {
  if (path.extension() == ".mid" || path.extension() == ".midi") return skyline(read_midi(path).performance);
  return contour_from_json(read_json(path));
}

bool has_song(const PairEntry& e) { return !e.song.empty() || !e.song_features.empty(); }

TimeMap align_to_song(const PianoPerformance& piano, const FeatureMatrix& song, double* cost = nullptr) {
  const auto path = dtw_path(chroma_from_midi(piano, song.frame_rate), song);
  if (cost) *cost = path.cost;
  return time_map_from_path(path, song.frame_rate);
}

// Commands ------------------------------------------------------------------

struct AlignArgs {
  std::string piano, song, out;
};

int cmd_align(const AlignArgs& a, const Settings& s, const Logger& log) {
  const auto piano = read_midi(a.piano).performance;
  const auto pcm = read_wav(a.song);
  const auto song = chromagram(pcm.samples, pcm.sample_rate, s.chroma);
  const auto path = dtw_path(chroma_from_midi(piano, song.frame_rate), song);
  const auto map = time_map_from_path(path, song.frame_rate);
  json j = time_map_to_json(map, path.cost);
  j["frames"] = {{"piano", path.points.back().i + 1}, {"song", song.frames}};
  write_text(a.out, with_provenance(j, s).dump(2) + "\n");
  log.info("aligned", {{"cost", path.cost}, {"path_length", path.points.size()}});
  return 0;
}

struct TokenizeArgs {
  std::string midi, beats, out, id;
};

int cmd_tokenize(const TokenizeArgs& a, const Settings& s, const Logger& log) {
  const Vocabulary vocab(s.vocab);
  const auto perf = read_midi(a.midi).performance;
  const auto seq = encode(perf, read_beats(a.beats), vocab);
  const std::string id = a.id.empty() ? fs::path(a.midi).stem().string() : a.id;
  write_text(a.out, with_provenance(token_record(id, seq, vocab), s).dump() + "\n");
  log.info("tokenized", {{"id", id}, {"tokens", seq.ids.size()}, {"bars", seq.bar_spans.size()}});
  return 0;
}

struct DetokenizeArgs {
  std::string tokens, beats, out;
  int index = 0;
};

int cmd_detokenize(const DetokenizeArgs& a, const Settings& s, const Logger& log) {
  const Vocabulary vocab(s.vocab);
  const auto records = read_jsonl(a.tokens);
  if (a.index < 0 || static_cast<std::size_t>(a.index) >= records.size()) {
    throw Error(ErrorCode::kOutOfRange, "record index " + std::to_string(a.index) + " not in " + a.tokens);
  }
  const auto seq = tokens_from_record(records[static_cast<std::size_t>(a.index)], vocab);
  const auto perf = decode(seq, read_beats(a.beats), vocab);
  write_midi(a.out, perf);
  log.info("detokenized", {{"notes", perf.notes.size()}});
  return 0;
}

struct BuildArgs {
  std::string manifest, out;
  std::optional<double> min_mca, max_length_dev;
  std::optional<int> segment_len;
};

struct BuiltPiece {
  std::string id;
  std::vector<TrainingSegment> segments;
  json report;
};

BuiltPiece build_piece(const PairEntry& e, const Settings& s, const Vocabulary& vocab) {
  BuiltPiece out{e.id, {}, {{"id", e.id}}};
  auto piano = read_midi(e.piano).performance;
  const double midi_length = piano.length;
  const BeatGrid piano_grid = read_beats(e.piano_beats);
  // MIDI files end at the last note-off; the features must cover every bar.
  piano.length = std::max(piano.length, piano_grid.time_at(bars_from_grid(piano_grid).back().end_beat));
  const PianoOnlyRecord rec{e.id, piano, piano_grid, chroma_from_midi(piano, s.chroma.frame_rate)};
  for (auto& seg : segment(build_interleaved(rec, vocab), vocab, s.segment_len)) out.segments.push_back(std::move(seg));
  out.report["piano_only_segments"] = out.segments.size();
  if (!has_song(e)) {
    out.report["paired"] = false;
    return out;
  }
  const SongData song = load_song(e, s.chroma);
  const BeatGrid song_grid = read_beats(e.song_beats);
  double cost = 0.0;
  const TimeMap map = align_to_song(piano, song.features, &cost);
  const double len_dev = duration_deviation(midi_length, song.length) - 1.0;
  double m = 1.0;
  if (!e.reference.empty()) m = mca(load_reference(e.reference), skyline(remap_notes(piano, map, song_grid)));
  const auto decision = filter_pair(m, len_dev, s.filter);
  out.report["mca"] = e.reference.empty() ? json(nullptr) : json(m);
  out.report["length_deviation"] = len_dev;
  out.report["dtw_cost"] = cost;
  if (!decision.keep) {
    out.report["paired"] = false;
    out.report["rejected"] = decision.reason;
    return out;
  }
  auto pair = build_weak_pair(piano, song.features, map, piano_grid, song_grid, vocab);
  pair.id = e.id;
  std::size_t n = 0;
  for (auto& seg : segment(build_interleaved(pair), vocab, s.segment_len)) {
    out.segments.push_back(std::move(seg));
    ++n;
  }
  out.report["paired"] = true;
  out.report["paired_segments"] = n;
  out.report["invalid_bars"] = pair.invalid_bars;
  out.report["monotone"] = pair.alignment.is_monotone();
  return out;
}

int cmd_build_dataset(const BuildArgs& a, Settings s, const Globals& g, const Logger& log) {
  if (a.min_mca) s.filter.min_mca = *a.min_mca;
  if (a.max_length_dev) s.filter.max_length_deviation = *a.max_length_dev;
  if (a.segment_len) s.segment_len = *a.segment_len;
  const Vocabulary vocab(s.vocab);
  auto entries = read_manifest(a.manifest);
  std::sort(entries.begin(), entries.end(), [](const PairEntry& x, const PairEntry& y) { return x.id < y.id; });
  const auto pieces = parallel_map<BuiltPiece>(entries.size(), g.jobs, [&](std::size_t i) {
    try {
      return build_piece(entries[i], s, vocab);
    } catch (const Error& e) {
      throw Error(e.code(), "piece '" + entries[i].id + "': " + e.what(), e.offset());
    }
  });
  std::vector<json> lines;
  json report = json::array();
  std::size_t kept = 0;
  for (const auto& p : pieces) {
    for (const auto& seg : p.segments) lines.push_back(with_provenance(segment_to_json(seg), s));
    kept += p.report.value("paired", false);
    report.push_back(p.report);
    log.info("piece", p.report);
  }
  write_jsonl(a.out, lines);
  write_json(fs::path(a.out).string() + ".report.json",
             with_provenance({{"pieces", report}, {"kept_pairs", kept}, {"segments", lines.size()},
                              {"filter", s.filter}, {"segment_len", s.segment_len}},
                             s));
  log.info("dataset written", {{"segments", lines.size()}, {"kept_pairs", kept}, {"pieces", pieces.size()}});
  return 0;
}

Corpus read_corpus(const std::vector<std::string>& paths) {
  Corpus c;
  for (const auto& p : paths) {
    for (const auto& j : read_jsonl(p)) {
      auto seg = segment_from_json(j);
      (seg.kind == SequenceKind::kPaired ? c.paired : c.piano_only).push_back(std::move(seg));
    }
  }
  return c;
}

struct TrainArgs {
  std::vector<std::string> data;
  std::string stage = "pretrain", init, out;
  std::optional<double> alpha, lr;
  std::optional<int> steps, batch_size, checkpoint_every;
  bool scratch = false;
};

int cmd_train(const TrainArgs& a, Settings s, const Logger& log) {
  if (a.alpha) s.train.alpha = *a.alpha;
  if (a.lr) s.train.learning_rate = *a.lr;
  if (a.steps) s.train.steps = *a.steps;
  if (a.batch_size) s.train.batch_size = *a.batch_size;
  if (a.checkpoint_every) s.train.checkpoint_every = *a.checkpoint_every;
  s.train.seed = s.seed;
  s.train.allow_scratch_finetune = a.scratch;
  if (s.train.checkpoint_every > 0) s.train.checkpoint_dir = fs::path(a.out).string() + ".steps";
  const Vocabulary vocab(s.vocab);
  s.model.vocab_size = vocab.size();
  const Stage stage = parse_stage(a.stage);
  const Corpus corpus = read_corpus(a.data);
  std::optional<ModelCheckpoint> init;
  if (!a.init.empty()) init = load_checkpoint(a.init, s.model);
  log.info("training", {{"stage", stage_name(stage)},
                        {"piano_only_segments", corpus.piano_only.size()},
                        {"paired_segments", corpus.paired.size()},
                        {"steps", s.train.steps}});
  const long long every = std::max(1, s.train.steps / 20);
  const auto result = train(stage, corpus, s.model, s.train, init, [&](long long step, double loss) {
    if (step % every == 0) log.info("step", {{"step", step}, {"loss", loss}});
  });
  save_checkpoint(result.checkpoint, a.out);
  write_json(fs::path(a.out) / "train_log.json",
             with_provenance({{"stage", stage_name(stage)}, {"losses", result.losses}, {"train", s.train}}, s));
  log.info("checkpoint written", {{"dir", a.out}, {"final_loss", result.losses.empty() ? 0.0 : result.losses.back()}});
  return 0;
}

struct GenerateArgs {
  std::string checkpoint, song, song_features, song_beats, out, midi, id;
  std::optional<double> temperature, top_p;
  std::optional<int> max_tokens_per_bar;
};

int cmd_generate(const GenerateArgs& a, Settings s, const Logger& log) {
  if (a.temperature) s.sampling.temperature = *a.temperature;
  if (a.top_p) s.sampling.top_p = *a.top_p;
  if (a.max_tokens_per_bar) s.sampling.max_tokens_per_bar = *a.max_tokens_per_bar;
  s.sampling.seed = s.seed;
  const Vocabulary vocab(s.vocab);
  const auto ckpt = load_checkpoint(a.checkpoint);
  PairEntry e;
  e.song = a.song;
  e.song_features = a.song_features;
  if (!has_song(e)) throw Error(ErrorCode::kInvalidArgument, "generate needs --song or --song-features");
  const SongData song = load_song(e, s.chroma);
  const BeatGrid grid = read_beats(a.song_beats);
  std::vector<ConditionBlock> blocks;
  for (const Bar& bar : bars_from_grid(grid)) {
    if (bar.end_beat >= grid.count()) break;  // open tail bar
    if (grid.time_at(bar.end_beat) > song.length + 1e-9) break;
    blocks.push_back(extract_condition_features(song.features, grid, bar));
  }
  if (blocks.empty()) throw Error(ErrorCode::kInvalidArgument, "song has no complete bar inside its beat grid");
  const auto seq = generate(ckpt, vocab, blocks, s.sampling);
  const std::string id = a.id.empty() ? fs::path(a.song.empty() ? a.song_features : a.song).stem().string() : a.id;
  json rec = token_record(id, seq, vocab);
  rec["beats"] = fs::absolute(a.song_beats).string();
  write_text(a.out, with_provenance(rec, s).dump() + "\n");
  if (!a.midi.empty()) write_midi(a.midi, decode(seq, grid, vocab));
  log.info("generated", {{"bars", blocks.size()}, {"tokens", seq.ids.size()}});
  return 0;
}

struct EvaluateArgs {
  std::string generated, beats, ref, out;
};

struct EvalRow {
  std::string id;
  std::optional<double> mca, gs;
  double h4 = 0.0;
};

int cmd_evaluate(const EvaluateArgs& a, const Settings& s, const Globals& g, const Logger& log) {
  const Vocabulary vocab(s.vocab);
  const auto records = read_jsonl(a.generated);
  const fs::path base = fs::path(a.generated).parent_path();
  auto path_of = [&](const json& r, const char* key, const std::string& fallback) -> fs::path {
    if (r.contains(key) && r[key].is_string()) {
      const fs::path p = r[key].get<std::string>();
      return p.is_absolute() ? p : base / p;
    }
    return fallback;
  };
  const auto rows = parallel_map<EvalRow>(records.size(), g.jobs, [&](std::size_t i) {
    const auto& r = records[i];
    const fs::path beats = path_of(r, "beats", a.beats);
    if (beats.empty()) throw Error(ErrorCode::kInvalidArgument, "record " + std::to_string(i) + " has no beats");
    const BeatGrid grid = read_beats(beats);
    const auto perf = decode(tokens_from_record(r, vocab), grid, vocab);
    EvalRow row{r.value("id", std::to_string(i)), std::nullopt, std::nullopt, 0.0};
    const fs::path ref = path_of(r, "reference", a.ref);
    if (!ref.empty()) row.mca = mca(load_reference(ref), skyline(perf));
    const auto bars = notes_by_bar(perf, grid);
    if (bars.size() >= 2) row.gs = grooving_similarity_next(bars);
    row.h4 = pitch_class_entropy_4(bars);
    return row;
  });
  std::ostringstream csv;
  csv << "# covergen " << COVERGEN_VERSION << " config_hash=" << s.hash() << "\n";
  csv << "id,mca,gs,h4\n";
  std::vector<double> m, gs, h4;
  auto cell = [](std::optional<double> v) {
    char buf[32];
    if (!v) return std::string();
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    csv << r.id << ',' << cell(r.mca) << ',' << cell(r.gs) << ',' << cell(r.h4) << '\n';
    if (r.mca) m.push_back(*r.mca);
    if (r.gs) gs.push_back(*r.gs);
    h4.push_back(r.h4);
  }
  auto summary = [&](const std::vector<double>& v) { return v.empty() ? std::string() : format_mean_std(mean_std(v)); };
  csv << "mean," << summary(m) << ',' << summary(gs) << ',' << summary(h4) << '\n';
  write_text(a.out, csv.str());
  log.info("evaluated", {{"pieces", rows.size()}});
  return 0;
}

struct StatsArgs {
  std::string manifest, out, format = "json";
};

struct PairStats {
  std::string id;
  double duration = 1.0, tempo = 1.0, ioi_strong = 1.0, ioi_weak = 1.0;
};

int cmd_stats(const StatsArgs& a, const Settings& s, const Globals& g, const Logger& log) {
  const Vocabulary vocab(s.vocab);
  auto entries = read_manifest(a.manifest);
  std::erase_if(entries, [](const PairEntry& e) { return !has_song(e); });
  std::sort(entries.begin(), entries.end(), [](const PairEntry& x, const PairEntry& y) { return x.id < y.id; });
  const auto rows = parallel_map<PairStats>(entries.size(), g.jobs, [&](std::size_t i) {
    const auto& e = entries[i];
    const auto piano = read_midi(e.piano).performance;
    const BeatGrid piano_grid = read_beats(e.piano_beats);
    const BeatGrid song_grid = read_beats(e.song_beats);
    const SongData song = load_song(e, s.chroma);
    const TimeMap map = align_to_song(piano, song.features);
    const auto pair = build_weak_pair(piano, song.features, map, piano_grid, song_grid, vocab);
    return PairStats{e.id, duration_deviation(piano.length, song.length),
                     tempo_deviation(estimate_bpm(piano_grid), estimate_bpm(song_grid)),
                     ioi_deviation(piano, remap_notes(piano, map, song_grid)), ioi_deviation(piano, pair.piano)};
  });
  std::vector<double> d, t, is, iw;
  for (const auto& r : rows) {
    d.push_back(r.duration);
    t.push_back(r.tempo);
    is.push_back(r.ioi_strong);
    iw.push_back(r.ioi_weak);
  }
  std::string text;
  if (a.format == "csv") {
    std::ostringstream csv;
    csv << "# covergen " << COVERGEN_VERSION << " config_hash=" << s.hash() << "\n";
    csv << "id,duration_deviation,tempo_deviation,ioi_deviation_strong,ioi_deviation_weak\n";
    char buf[160];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%s,%.4f,%.4f,%.4f,%.4f\n", r.id.c_str(), r.duration, r.tempo, r.ioi_strong,
                    r.ioi_weak);
      csv << buf;
    }
    if (!rows.empty()) {
      csv << "mean," << format_mean_std(mean_std(d)) << ',' << format_mean_std(mean_std(t)) << ','
          << format_mean_std(mean_std(is)) << ',' << format_mean_std(mean_std(iw)) << '\n';
    }
    text = csv.str();
  } else if (a.format == "json") {
    json pairs = json::array();
    for (const auto& r : rows) {
      pairs.push_back({{"id", r.id},
                       {"duration_deviation", r.duration},
                       {"tempo_deviation", r.tempo},
                       {"ioi_deviation_strong", r.ioi_strong},
                       {"ioi_deviation_weak", r.ioi_weak}});
    }
    json summary = json::object();
    if (!rows.empty()) {
      summary = {{"duration_deviation", format_mean_std(mean_std(d))},
                 {"tempo_deviation", format_mean_std(mean_std(t))},
                 {"ioi_deviation_strong", format_mean_std(mean_std(is))},
                 {"ioi_deviation_weak", format_mean_std(mean_std(iw))}};
    }
    text = with_provenance({{"pairs", pairs}, {"summary", summary}}, s).dump(2) + "\n";
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown format '" + a.format + "'");
  }
  write_text(a.out, text);
  log.info("stats", {{"pairs", rows.size()}});
  return 0;
}

struct SynthArgs {
  std::string out;
  int pieces = 8, bars = 4, sample_rate = 22050;
  double bpm = 120.0, warp = 1.1;
  std::vector<int> flat_bars;
};

int cmd_synth_fixtures(const SynthArgs& a, const Settings& s, const Logger& log) {
  const fs::path root = a.out;
  fs::create_directories(root);
  std::vector<json> manifest;
  for (int k = 0; k < a.pieces; ++k) {
    SynthOptions o;
    o.bars = a.bars;
    o.bpm = a.bpm;
    o.warp = a.warp;
    o.sample_rate = a.sample_rate;
    o.flat_bars = {a.flat_bars.begin(), a.flat_bars.end()};
    char name[32];
    std::snprintf(name, sizeof(name), "piece%03d", k);
    const auto p = synth_piece(name, o, s.seed + static_cast<std::uint64_t>(k));
    const fs::path dir = root / name;
    fs::create_directories(dir);
    write_midi(dir / "piano.mid", p.piano);
    write_json(dir / "piano_beats.json", with_provenance(beats_to_json(p.piano_grid), s));
    write_wav(dir / "song.wav", p.song_audio);
    write_json(dir / "song_beats.json", with_provenance(beats_to_json(p.song_grid), s));
    write_json(dir / "reference.json", with_provenance(contour_to_json(p.reference), s));
    write_json(dir / "truth.json", with_provenance({{"warp", time_map_to_json(p.warp)},
                                                    {"flat_bars", p.flat_bars},
                                                    {"seed", s.seed + static_cast<std::uint64_t>(k)}},
                                                   s));
    const std::string n = name;
    manifest.push_back(with_provenance({{"id", n},
                                        {"piano", n + "/piano.mid"},
                                        {"piano_beats", n + "/piano_beats.json"},
                                        {"song", n + "/song.wav"},
                                        {"song_beats", n + "/song_beats.json"},
                                        {"reference", n + "/reference.json"}},
                                       s));
  }
  write_jsonl(root / "manifest.jsonl", manifest);
  log.info("fixtures written", {{"dir", root.string()}, {"pieces", a.pieces}});
  return 0;
}

void print_error(const std::string& code, const std::string& message, std::optional<std::size_t> offset = {}) {
  json j = {{"error", {{"code", code}, {"message", message}}}};
  if (offset) j["error"]["offset"] = *offset;
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Piano cover generation toolkit", "covergen"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("covergen ") + COVERGEN_VERSION);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "JSON config file; flags override it")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every random choice");
  app.add_option("--jobs", g.jobs, "Worker threads for per-piece work")->check(CLI::PositiveNumber);
  app.add_flag("--log-json", g.log_json, "Log to stderr as JSON lines");

  AlignArgs al;
  auto* c_align = app.add_subcommand("align", "Align a piano MIDI to song audio");
  c_align->add_option("piano", al.piano)->required()->check(CLI::ExistingFile);
  c_align->add_option("song", al.song)->required()->check(CLI::ExistingFile);
  c_align->add_option("-o,--output", al.out, "Output JSON (default stdout)");

  TokenizeArgs tk;
  auto* c_tok = app.add_subcommand("tokenize", "Encode a MIDI file to tokens");
  c_tok->add_option("midi", tk.midi)->required()->check(CLI::ExistingFile);
  c_tok->add_option("--beats", tk.beats, "Beat grid JSON")->required()->check(CLI::ExistingFile);
  c_tok->add_option("--id", tk.id, "Record id (default: file stem)");
  c_tok->add_option("-o,--output", tk.out, "Output JSONL (default stdout)");

  DetokenizeArgs dt;
  auto* c_detok = app.add_subcommand("detokenize", "Decode a token record to MIDI");
  c_detok->add_option("tokens", dt.tokens)->required()->check(CLI::ExistingFile);
  c_detok->add_option("--beats", dt.beats, "Beat grid JSON")->required()->check(CLI::ExistingFile);
  c_detok->add_option("--index", dt.index, "Record index in the JSONL file");
  c_detok->add_option("-o,--output", dt.out, "Output MIDI")->required();

  BuildArgs bd;
  auto* c_build = app.add_subcommand("build-dataset", "Filter pairs and pack training segments");
  c_build->add_option("manifest", bd.manifest, "Pair manifest JSONL")->required()->check(CLI::ExistingFile);
  c_build->add_option("--min-mca", bd.min_mca);
  c_build->add_option("--max-length-dev", bd.max_length_dev);
  c_build->add_option("--segment-len", bd.segment_len)->check(CLI::PositiveNumber);
  c_build->add_option("-o,--output", bd.out, "Output segment JSONL")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Pretrain or finetune the decoder");
  c_train->add_option("--data", tr.data, "Segment JSONL files")->required()->check(CLI::ExistingFile);
  c_train->add_option("--stage", tr.stage)->check(CLI::IsMember({"pretrain", "finetune"}));
  c_train->add_option("--alpha", tr.alpha)->check(CLI::Range(0.0, 1.0));
  c_train->add_option("--steps", tr.steps)->check(CLI::NonNegativeNumber);
  c_train->add_option("--lr", tr.lr);
  c_train->add_option("--batch-size", tr.batch_size)->check(CLI::PositiveNumber);
  c_train->add_option("--checkpoint-every", tr.checkpoint_every);
  c_train->add_option("--init", tr.init, "Checkpoint to start from")->check(CLI::ExistingDirectory);
  c_train->add_flag("--allow-scratch-finetune", tr.scratch);
  c_train->add_option("-o,--output", tr.out, "Checkpoint directory")->required();

  GenerateArgs gn;
  auto* c_gen = app.add_subcommand("generate", "Generate a piano cover for a song");
  c_gen->add_option("--checkpoint", gn.checkpoint)->required()->check(CLI::ExistingDirectory);
  auto* song_opt = c_gen->add_option("--song", gn.song, "Song WAV")->check(CLI::ExistingFile);
  c_gen->add_option("--song-features", gn.song_features, "Precomputed song features")
      ->check(CLI::ExistingFile)
      ->excludes(song_opt);
  c_gen->add_option("--song-beats", gn.song_beats)->required()->check(CLI::ExistingFile);
  c_gen->add_option("--temperature", gn.temperature)->check(CLI::NonNegativeNumber);
  c_gen->add_option("--top-p", gn.top_p);
  c_gen->add_option("--max-tokens-per-bar", gn.max_tokens_per_bar);
  c_gen->add_option("--id", gn.id);
  c_gen->add_option("--midi", gn.midi, "Also write the decoded MIDI here");
  c_gen->add_option("-o,--output", gn.out, "Output token JSONL (default stdout)");

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Score generated covers (MCA, GS, H4)");
  c_eval->add_option("generated", ev.generated, "Token JSONL")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--beats", ev.beats, "Beat grid when records carry none")->check(CLI::ExistingFile);
  c_eval->add_option("--ref", ev.ref, "Reference contour JSON or MIDI")->check(CLI::ExistingFile);
  c_eval->add_option("-o,--output", ev.out, "Output CSV (default stdout)");

  StatsArgs st;
  auto* c_stats = app.add_subcommand("stats", "Corpus deviation statistics");
  c_stats->add_option("manifest", st.manifest, "Pair manifest JSONL")->required()->check(CLI::ExistingFile);
  c_stats->add_option("--format", st.format)->check(CLI::IsMember({"json", "csv"}));
  c_stats->add_option("-o,--output", st.out, "Output report (default stdout)");

  SynthArgs sy;
  auto* c_synth = app.add_subcommand("synth-fixtures", "Write a synthetic corpus with known warps");
  c_synth->add_option("-o,--output", sy.out, "Output directory")->required();
  c_synth->add_option("--pieces", sy.pieces)->check(CLI::PositiveNumber);
  c_synth->add_option("--bars", sy.bars)->check(CLI::PositiveNumber);
  c_synth->add_option("--bpm", sy.bpm)->check(CLI::PositiveNumber);
  c_synth->add_option("--warp", sy.warp)->check(CLI::PositiveNumber);
  c_synth->add_option("--flat-bars", sy.flat_bars)->delimiter(',');
  c_synth->add_option("--sample-rate", sy.sample_rate)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    Settings s = load_settings(g.config);
    if (seed_opt->count()) s.seed = seed;
    const Logger log(g.log_json);
    if (*c_build) return cmd_build_dataset(bd, s, g, log);
    if (*c_train) return cmd_train(tr, s, log);
    if (*c_gen) return cmd_generate(gn, s, log);
    if (*c_eval) return cmd_evaluate(ev, s, g, log);
    if (*c_stats) return cmd_stats(st, s, g, log);
    if (*c_synth) return cmd_synth_fixtures(sy, s, log);
    if (*c_align) return cmd_align(al, s, log);
    if (*c_tok) return cmd_tokenize(tk, s, log);
    return cmd_detokenize(dt, s, log);
  } catch (const Error& e) {
    print_error(error_code_name(e.code()), e.what(), e.offset());
  } catch (const nlohmann::json::exception& e) {
    print_error(error_code_name(ErrorCode::kParse), e.what());
  } catch (const std::exception& e) {
    print_error("internal", e.what());
  }
  return 1;
}

}  // namespace covergen::cli
