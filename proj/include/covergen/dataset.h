// Pair filtering, interleaved condition/target sequences and training
// segment packing.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "covergen/beat_align.h"
#include "covergen/encoder.h"
#include "covergen/remi.h"

namespace covergen {

struct FilterConfig {
  double min_mca = 0.05;
  double max_length_deviation = 0.15;
};

struct FilterDecision {
  bool keep = true;
  std::string reason;  // "low-mca" or "length" when rejected
  bool operator==(const FilterDecision&) const = default;
};

/// length_deviation is the relative length difference (0.10 for 10%).
/// Rejects when mca < min_mca (checked first) or deviation > max.
FilterDecision filter_pair(double mca, double length_deviation, const FilterConfig& config = {});

enum class SequenceKind { kPaired, kPianoOnly };
const char* sequence_kind_name(SequenceKind kind);
SequenceKind parse_sequence_kind(const std::string& name);

enum class ElementKind { kCondition, kTarget };

struct InterleavedElement {
  ElementKind kind = ElementKind::kCondition;
  int bar_index = 0;
  int block = -1;                           // index into blocks (CONDITION)
  std::pair<std::size_t, std::size_t> span{0, 0};  // [start, end) into token_ids (TARGET)
};

struct InterleavedSequence {
  std::string id;
  SequenceKind kind = SequenceKind::kPaired;
  std::vector<InterleavedElement> elements;
  std::vector<ConditionBlock> blocks;
  std::vector<int> token_ids;

  /// Slots including the leading bos.
  std::size_t total_slots() const;
};

/// A piano performance conditioned on its own features.
struct PianoOnlyRecord {
  std::string id;
  PianoPerformance piano;
  BeatGrid grid;
  FeatureMatrix features;
};

/// Paired sequence over the pair's valid bars; condition blocks pool the song
/// features over each bar's song segment. Throws Error(kInvalidArgument) when
/// no valid bar remains.
InterleavedSequence build_interleaved(const WeakAlignedPair& pair, const std::string& id = {});
InterleavedSequence build_interleaved(const PianoOnlyRecord& record, const Vocabulary& vocab);

/// Throws Error(kInvalidArgument) unless elements alternate CONDITION/TARGET
/// with matching, strictly increasing bar indices.
void validate(const InterleavedSequence& seq, const Vocabulary& vocab);

/// One stream position: a token id, or row `row` of condition block `block`.
struct Slot {
  int token = -1;
  int block = -1;
  int row = -1;
  bool is_condition() const { return block >= 0; }
  bool operator==(const Slot&) const = default;
};

struct TrainingSegment {
  std::string piece_id;
  SequenceKind kind = SequenceKind::kPaired;
  std::vector<Slot> slots;
  std::vector<bool> loss_mask;        // true exactly on TARGET token slots
  std::vector<ConditionBlock> blocks; // blocks referenced by slots
  int first_bar = 0;

  std::size_t target_count() const;
};

/// Greedy packing of whole bars into segments of at most max_len slots.
/// The first segment starts with bos, continuations with ss. Throws
/// Error(kInvalidArgument) when one bar does not fit with its marker.
std::vector<TrainingSegment> segment(const InterleavedSequence& seq, const Vocabulary& vocab,
                                     std::size_t max_len = 1024);

}  // namespace covergen
