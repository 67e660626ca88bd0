// nlohmann::json conversions for configuration structs. Missing keys keep
// their defaults.

#pragma once

#include <json.hpp>

#include "covergen/dataset.h"
#include "covergen/encoder.h"
#include "covergen/features.h"
#include "covergen/model.h"
#include "covergen/remi.h"

namespace covergen {

void to_json(nlohmann::json& j, const VocabConfig& c);
void from_json(const nlohmann::json& j, VocabConfig& c);
void to_json(nlohmann::json& j, const ChromaConfig& c);
void from_json(const nlohmann::json& j, ChromaConfig& c);
void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const SamplingConfig& c);
void from_json(const nlohmann::json& j, SamplingConfig& c);
void to_json(nlohmann::json& j, const FilterConfig& c);
void from_json(const nlohmann::json& j, FilterConfig& c);

/// FNV-1a 64-bit hash, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace covergen
