#include "covergen/json_io.h"

#include <cstdio>

namespace covergen {

namespace {

template <typename V>
void get(const nlohmann::json& j, const char* key, V& out) {
  if (auto it = j.find(key); it != j.end()) it->get_to(out);
}

}  // namespace

void to_json(nlohmann::json& j, const VocabConfig& c) {
  j = {{"positions_per_bar", c.positions_per_bar}, {"tempo_bins", c.tempo_bins},
       {"tempo_min_bpm", c.tempo_min_bpm},         {"tempo_max_bpm", c.tempo_max_bpm},
       {"velocity_bins", c.velocity_bins},         {"max_duration", c.max_duration},
       {"min_pitch", c.min_pitch},                 {"max_pitch", c.max_pitch}};
}

void from_json(const nlohmann::json& j, VocabConfig& c) {
  get(j, "positions_per_bar", c.positions_per_bar);
  get(j, "tempo_bins", c.tempo_bins);
  get(j, "tempo_min_bpm", c.tempo_min_bpm);
  get(j, "tempo_max_bpm", c.tempo_max_bpm);
  get(j, "velocity_bins", c.velocity_bins);
  get(j, "max_duration", c.max_duration);
  get(j, "min_pitch", c.min_pitch);
  get(j, "max_pitch", c.max_pitch);
}

void to_json(nlohmann::json& j, const ChromaConfig& c) {
  j = {{"frame_rate", c.frame_rate},
       {"window", c.window},
       {"min_freq", c.min_freq},
       {"max_freq", c.max_freq},
       {"silence_threshold", c.silence_threshold}};
}

void from_json(const nlohmann::json& j, ChromaConfig& c) {
  get(j, "frame_rate", c.frame_rate);
  get(j, "window", c.window);
  get(j, "min_freq", c.min_freq);
  get(j, "max_freq", c.max_freq);
  get(j, "silence_threshold", c.silence_threshold);
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"input_dim", c.input_dim}, {"d_model", c.d_model}, {"layers", c.layers}, {"heads", c.heads}, {"bias", c.bias}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  get(j, "input_dim", c.input_dim);
  get(j, "d_model", c.d_model);
  get(j, "layers", c.layers);
  get(j, "heads", c.heads);
  get(j, "bias", c.bias);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"d_model", c.d_model},       {"n_layers", c.n_layers},
       {"n_heads", c.n_heads},       {"ffn_dim", c.ffn_dim},
       {"dropout", c.dropout},       {"vocab_size", c.vocab_size},
       {"max_positions", c.max_positions}, {"bias", c.bias},
       {"adapter", c.adapter}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  get(j, "d_model", c.d_model);
  get(j, "n_layers", c.n_layers);
  get(j, "n_heads", c.n_heads);
  get(j, "ffn_dim", c.ffn_dim);
  get(j, "dropout", c.dropout);
  get(j, "vocab_size", c.vocab_size);
  get(j, "max_positions", c.max_positions);
  get(j, "bias", c.bias);
  get(j, "adapter", c.adapter);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"alpha", c.alpha},
       {"steps", c.steps},
       {"seed", c.seed},
       {"grad_clip", c.grad_clip},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"checkpoint_every", c.checkpoint_every},
       {"checkpoint_dir", c.checkpoint_dir.string()},
       {"allow_scratch_finetune", c.allow_scratch_finetune}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  get(j, "learning_rate", c.learning_rate);
  get(j, "batch_size", c.batch_size);
  get(j, "alpha", c.alpha);
  get(j, "steps", c.steps);
  get(j, "seed", c.seed);
  get(j, "grad_clip", c.grad_clip);
  get(j, "beta1", c.beta1);
  get(j, "beta2", c.beta2);
  get(j, "adam_eps", c.adam_eps);
  get(j, "checkpoint_every", c.checkpoint_every);
  if (auto it = j.find("checkpoint_dir"); it != j.end()) c.checkpoint_dir = it->get<std::string>();
  get(j, "allow_scratch_finetune", c.allow_scratch_finetune);
}

void to_json(nlohmann::json& j, const SamplingConfig& c) {
  j = {{"temperature", c.temperature},
       {"top_p", c.top_p},
       {"max_tokens_per_bar", c.max_tokens_per_bar},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SamplingConfig& c) {
  get(j, "temperature", c.temperature);
  get(j, "top_p", c.top_p);
  get(j, "max_tokens_per_bar", c.max_tokens_per_bar);
  get(j, "seed", c.seed);
}

void to_json(nlohmann::json& j, const FilterConfig& c) {
  j = {{"min_mca", c.min_mca}, {"max_length_deviation", c.max_length_deviation}};
}

void from_json(const nlohmann::json& j, FilterConfig& c) {
  get(j, "min_mca", c.min_mca);
  get(j, "max_length_deviation", c.max_length_deviation);
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace covergen
