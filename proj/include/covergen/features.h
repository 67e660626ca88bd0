// Chroma features from WAV audio or directly from MIDI notes.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "covergen/core.h"

namespace covergen {

enum class FeatureSource : std::uint8_t { kAudio, kMidiSynthetic, kExternal };

const char* feature_source_name(FeatureSource source);
FeatureSource parse_feature_source(const std::string& name);

/// Row-major frames x dims matrix. Chroma matrices have dims == 12 and every
/// frame L2-normalized or all-zero; `energy` keeps each frame's magnitude
/// before normalization (empty for imported embeddings).
struct FeatureMatrix {
  int frames = 0;
  int dims = 12;
  double frame_rate = 10.0;
  FeatureSource source = FeatureSource::kAudio;
  std::vector<float> data;
  std::vector<float> energy;

  float at(int frame, int dim) const { return data[static_cast<std::size_t>(frame) * dims + dim]; }
  float& at(int frame, int dim) { return data[static_cast<std::size_t>(frame) * dims + dim]; }
  std::span<const float> row(int frame) const {
    return {data.data() + static_cast<std::size_t>(frame) * dims, static_cast<std::size_t>(dims)};
  }
  double duration() const { return frames / frame_rate; }
};

struct PcmBuffer {
  std::vector<float> samples;  // mono, [-1, 1]
  int sample_rate = 22050;
};

/// 16-bit PCM WAV, mono or stereo (downmixed as (L+R)/2).
PcmBuffer parse_wav(std::span<const std::uint8_t> bytes);
PcmBuffer read_wav(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_wav(const PcmBuffer& pcm);
void write_wav(const std::filesystem::path& path, const PcmBuffer& pcm);

struct ChromaConfig {
  double frame_rate = 10.0;
  int window = 4096;          // at 22050 Hz; scaled with the sample rate
  double min_freq = 27.5;     // A0
  double max_freq = 4186.0;   // C8
  double silence_threshold = 1e-6;
};

/// STFT magnitude folded to pitch classes, smoothed over neighbouring frames
/// and normalized per frame. Throws if pcm is shorter than one window.
FeatureMatrix chromagram(std::span<const float> pcm, int sample_rate, const ChromaConfig& config = {});

/// Velocity-weighted sounding-pitch indicator per frame, folded mod 12 and
/// normalized. Frame f samples time (f + 0.5) / frame_rate.
FeatureMatrix chroma_from_midi(const PianoPerformance& perf, double frame_rate = 10.0);

/// Transposes every note, dropping none; throws if a pitch leaves 21..108.
PianoPerformance transpose(const PianoPerformance& perf, int semitones);

}  // namespace covergen
