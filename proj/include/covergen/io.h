// On-disk formats: beat annotations, time maps, feature matrices, melody
// contours, token records and training segments.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "covergen/alignment.h"
#include "covergen/core.h"
#include "covergen/dataset.h"
#include "covergen/features.h"
#include "covergen/metrics.h"
#include "covergen/remi.h"

namespace covergen {

/// {"version": ..., "config_hash": ...} attached to every written artifact.
nlohmann::json provenance(const std::string& config_hash);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
/// One JSON value per non-empty line.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& lines);

/// {"beats": [...], "downbeats": [...]}
nlohmann::json beats_to_json(const BeatGrid& grid);
BeatGrid beats_from_json(const nlohmann::json& j);
BeatGrid read_beats(const std::filesystem::path& path);

/// {"knots": [[piano_s, song_s], ...], "cost": c}
nlohmann::json time_map_to_json(const TimeMap& map, double cost = 0.0);
TimeMap time_map_from_json(const nlohmann::json& j);

/// {"frame_rate": r, "pitches": [p or null, ...]}
nlohmann::json contour_to_json(const MelodyContour& contour);
MelodyContour contour_from_json(const nlohmann::json& j);

/// Binary: "CGFM", u32 header length, JSON header, float32 data, float32 energy.
std::vector<std::uint8_t> serialize_features(const FeatureMatrix& features);
FeatureMatrix parse_features(std::span<const std::uint8_t> bytes);
void write_features(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_features(const std::filesystem::path& path);

/// {"id", "tokens": [names], "bar_spans": [[start, end], ...]}
nlohmann::json token_record(const std::string& id, const TokenSequence& seq, const Vocabulary& vocab);
/// Accepts token names or integer ids; recomputes spans when absent.
TokenSequence tokens_from_record(const nlohmann::json& j, const Vocabulary& vocab);

nlohmann::json vocab_to_json(const Vocabulary& vocab);

nlohmann::json block_to_json(const ConditionBlock& block);
ConditionBlock block_from_json(const nlohmann::json& j);
nlohmann::json segment_to_json(const TrainingSegment& segment);
TrainingSegment segment_from_json(const nlohmann::json& j);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace covergen
