#include "covergen/dataset.h"

#include "covergen/error.h"

namespace covergen {

FilterDecision filter_pair(double mca, double length_deviation, const FilterConfig& config) {
  if (mca < config.min_mca) return {false, "low-mca"};
  if (length_deviation > config.max_length_deviation) return {false, "length"};
  return {true, ""};
}

const char* sequence_kind_name(SequenceKind kind) { return kind == SequenceKind::kPaired ? "paired" : "piano-only"; }

SequenceKind parse_sequence_kind(const std::string& name) {
  if (name == "paired") return SequenceKind::kPaired;
  if (name == "piano-only") return SequenceKind::kPianoOnly;
  throw Error(ErrorCode::kParse, "unknown sequence kind '" + name + "'");
}

std::size_t InterleavedSequence::total_slots() const {
  std::size_t n = 1;
  for (const auto& e : elements) {
    n += e.kind == ElementKind::kCondition ? static_cast<std::size_t>(blocks[static_cast<std::size_t>(e.block)].rows)
                                           : e.span.second - e.span.first;
  }
  return n;
}

namespace {

void append_bar(InterleavedSequence& seq, ConditionBlock block, std::pair<std::size_t, std::size_t> span) {
  const int bar = block.bar_index;
  seq.elements.push_back({ElementKind::kCondition, bar, static_cast<int>(seq.blocks.size()), {0, 0}});
  seq.blocks.push_back(std::move(block));
  seq.elements.push_back({ElementKind::kTarget, bar, -1, span});
}

}  // namespace

InterleavedSequence build_interleaved(const WeakAlignedPair& pair, const std::string& id) {
  if (pair.valid_bars.empty()) throw Error(ErrorCode::kInvalidArgument, "pair has no valid bars");
  InterleavedSequence seq;
  seq.id = id.empty() ? pair.id : id;
  seq.kind = SequenceKind::kPaired;
  seq.token_ids = pair.tokens.ids;
  for (const Bar& bar : pair.valid_bars) {
    const SongSegment s = song_segment(pair.alignment, bar);
    if (s.end_beat <= s.start_beat) {
      throw Error(ErrorCode::kInvalidArgument, "bar " + std::to_string(bar.index) + " maps to an empty song segment");
    }
    if (static_cast<std::size_t>(bar.index) >= pair.tokens.bar_spans.size()) {
      throw Error(ErrorCode::kOutOfRange, "bar " + std::to_string(bar.index) + " has no token span");
    }
    append_bar(seq,
               extract_condition_features(pair.song_features, pair.alignment.song_grid, s.start_beat, s.end_beat,
                                          bar.index),
               pair.tokens.bar_spans[static_cast<std::size_t>(bar.index)]);
  }
  return seq;
}

InterleavedSequence build_interleaved(const PianoOnlyRecord& record, const Vocabulary& vocab) {
  const TokenSequence tokens = encode(record.piano, record.grid, vocab, extract_chords(record.piano, record.grid));
  const std::vector<Bar> bars = bars_from_grid(record.grid);
  if (bars.empty()) throw Error(ErrorCode::kInvalidArgument, "record has no bars");
  InterleavedSequence seq;
  seq.id = record.id;
  seq.kind = SequenceKind::kPianoOnly;
  seq.token_ids = tokens.ids;
  for (const Bar& bar : bars) {
    append_bar(seq, extract_condition_features(record.features, record.grid, bar),
               tokens.bar_spans[static_cast<std::size_t>(bar.index)]);
  }
  return seq;
}

void validate(const InterleavedSequence& seq, const Vocabulary& vocab) {
  if (seq.elements.size() % 2 != 0) throw Error(ErrorCode::kInvalidArgument, "odd number of elements");
  int prev_bar = -1;
  for (std::size_t i = 0; i < seq.elements.size(); i += 2) {
    const auto& c = seq.elements[i];
    const auto& t = seq.elements[i + 1];
    if (c.kind != ElementKind::kCondition || t.kind != ElementKind::kTarget) {
      throw Error(ErrorCode::kInvalidArgument, "elements do not alternate CONDITION/TARGET at " + std::to_string(i));
    }
    if (c.bar_index != t.bar_index || c.bar_index <= prev_bar) {
      throw Error(ErrorCode::kInvalidArgument, "bar indices out of order at element " + std::to_string(i));
    }
    prev_bar = c.bar_index;
    if (c.block < 0 || static_cast<std::size_t>(c.block) >= seq.blocks.size() ||
        seq.blocks[static_cast<std::size_t>(c.block)].bar_index != c.bar_index) {
      throw Error(ErrorCode::kInvalidArgument, "condition element references a wrong block");
    }
    const auto [a, b] = t.span;
    if (b <= a || b > seq.token_ids.size() || seq.token_ids[a] != vocab.bar_start() ||
        seq.token_ids[b - 1] != vocab.bar_end()) {
      throw Error(ErrorCode::kInvalidArgument, "target span is not a bar");
    }
  }
}

std::size_t TrainingSegment::target_count() const {
  std::size_t n = 0;
  for (bool m : loss_mask) n += m;
  return n;
}

std::vector<TrainingSegment> segment(const InterleavedSequence& seq, const Vocabulary& vocab, std::size_t max_len) {
  validate(seq, vocab);
  if (max_len < 2) throw Error(ErrorCode::kInvalidArgument, "max_len must be at least 2");
  std::vector<TrainingSegment> out;
  auto open = [&](int marker, int first_bar) {
    TrainingSegment s;
    s.piece_id = seq.id;
    s.kind = seq.kind;
    s.first_bar = first_bar;
    s.slots.push_back({marker, -1, -1});
    s.loss_mask.push_back(false);
    out.push_back(std::move(s));
  };
  for (std::size_t i = 0; i < seq.elements.size(); i += 2) {
    const auto& c = seq.elements[i];
    const auto& t = seq.elements[i + 1];
    const ConditionBlock& block = seq.blocks[static_cast<std::size_t>(c.block)];
    const std::size_t bar_len = static_cast<std::size_t>(block.rows) + (t.span.second - t.span.first);
    if (bar_len + 1 > max_len) {
      throw Error(ErrorCode::kInvalidArgument, "bar " + std::to_string(c.bar_index) + " of '" + seq.id + "' needs " +
                                                   std::to_string(bar_len + 1) + " slots, segment length is " +
                                                   std::to_string(max_len));
    }
    if (out.empty()) {
      open(vocab.bos(), c.bar_index);
    } else if (out.back().slots.size() + bar_len > max_len) {
      open(vocab.ss(), c.bar_index);
    }
    TrainingSegment& s = out.back();
    const int local = static_cast<int>(s.blocks.size());
    s.blocks.push_back(block);
    for (int r = 0; r < block.rows; ++r) {
      s.slots.push_back({-1, local, r});
      s.loss_mask.push_back(false);
    }
    for (std::size_t k = t.span.first; k < t.span.second; ++k) {
      s.slots.push_back({seq.token_ids[k], -1, -1});
      s.loss_mask.push_back(true);
    }
  }
  return out;
}

}  // namespace covergen
