#include "covergen/features.h"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>

#include "covergen/error.h"

namespace covergen {

const char* feature_source_name(FeatureSource source) {
  switch (source) {
    case FeatureSource::kAudio: return "audio";
    case FeatureSource::kMidiSynthetic: return "midi-synthetic";
    case FeatureSource::kExternal: return "external";
  }
  return "audio";
}

FeatureSource parse_feature_source(const std::string& name) {
  if (name == "audio") return FeatureSource::kAudio;
  if (name == "midi-synthetic") return FeatureSource::kMidiSynthetic;
  if (name == "external") return FeatureSource::kExternal;
  throw Error(ErrorCode::kParse, "unknown feature source '" + name + "'");
}

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

namespace {

std::uint32_t le32(std::span<const std::uint8_t> b, std::size_t at) {
  return std::uint32_t{b[at]} | (std::uint32_t{b[at + 1]} << 8) | (std::uint32_t{b[at + 2]} << 16) |
         (std::uint32_t{b[at + 3]} << 24);
}
std::uint16_t le16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

Error wav_error(const std::string& what, std::size_t at) {
  return Error(ErrorCode::kParse, "wav: " + what + " at byte " + std::to_string(at), at);
}

}  // namespace

PcmBuffer parse_wav(std::span<const std::uint8_t> b) {
  if (b.size() < 12) throw wav_error("truncated RIFF header", b.size());
  if (std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0) {
    throw wav_error("not a RIFF/WAVE file", 0);
  }
  const std::uint32_t riff_size = le32(b, 4);
  if (static_cast<std::size_t>(riff_size) + 8 != b.size()) {
    throw wav_error("RIFF size " + std::to_string(riff_size) + " does not match file size " +
                        std::to_string(b.size()),
                    4);
  }
  int channels = 0, rate = 0, bits = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::uint32_t len = le32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > b.size()) throw wav_error("chunk overruns file", pos);
    if (std::memcmp(b.data() + pos, "fmt ", 4) == 0) {
      if (len < 16) throw wav_error("fmt chunk too short", pos);
      const std::uint16_t format = le16(b, body);
      channels = le16(b, body + 2);
      rate = static_cast<int>(le32(b, body + 4));
      bits = le16(b, body + 14);
      if (format != 1) {
        throw Error(ErrorCode::kUnsupported, "wav: only uncompressed PCM is supported (format tag " +
                                                 std::to_string(format) + ")");
      }
      if (bits != 16) throw Error(ErrorCode::kUnsupported, "wav: only 16-bit samples are supported");
      if (channels < 1 || channels > 2) throw Error(ErrorCode::kUnsupported, "wav: only mono or stereo");
      if (rate <= 0) throw wav_error("non-positive sample rate", body + 4);
      have_fmt = true;
    } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
      if (!have_fmt) throw wav_error("data chunk before fmt chunk", pos);
      const std::size_t frame_bytes = static_cast<std::size_t>(channels) * 2;
      const std::size_t count = len / frame_bytes;
      PcmBuffer pcm;
      pcm.sample_rate = rate;
      pcm.samples.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t at = body + i * frame_bytes;
        float acc = 0.0f;
        for (int c = 0; c < channels; ++c) {
          acc += static_cast<float>(static_cast<std::int16_t>(le16(b, at + 2 * c))) / 32768.0f;
        }
        pcm.samples[i] = acc / static_cast<float>(channels);
      }
      return pcm;
    }
    pos = body + len + (len & 1);
  }
  throw wav_error("missing data chunk", pos);
}

PcmBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_wav(bytes);
}

std::vector<std::uint8_t> serialize_wav(const PcmBuffer& pcm) {
  const auto data_len = static_cast<std::uint32_t>(pcm.samples.size() * 2);
  std::vector<std::uint8_t> out;
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  auto put16 = [&](std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  };
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put32(36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(16);
  put16(1);
  put16(1);
  put32(static_cast<std::uint32_t>(pcm.sample_rate));
  put32(static_cast<std::uint32_t>(pcm.sample_rate * 2));
  put16(2);
  put16(16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put32(data_len);
  for (float s : pcm.samples) {
    const long v = std::lround(std::clamp(s, -1.0f, 1.0f) * 32767.0f);
    put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const PcmBuffer& pcm) {
  const auto bytes = serialize_wav(pcm);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Chroma
// ---------------------------------------------------------------------------

namespace {

void normalize_frames(FeatureMatrix& m, double threshold) {
  m.energy.assign(static_cast<std::size_t>(m.frames), 0.0f);
  for (int f = 0; f < m.frames; ++f) {
    double norm = 0.0;
    for (int d = 0; d < m.dims; ++d) norm += static_cast<double>(m.at(f, d)) * m.at(f, d);
    norm = std::sqrt(norm);
    m.energy[static_cast<std::size_t>(f)] = static_cast<float>(norm);
    for (int d = 0; d < m.dims; ++d) {
      m.at(f, d) = norm > threshold ? static_cast<float>(m.at(f, d) / norm) : 0.0f;
    }
    if (norm <= threshold) m.energy[static_cast<std::size_t>(f)] = 0.0f;
  }
}

// The FFTW planner is not reentrant; only fftw_execute may run concurrently.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwPlan {
  explicit FftwPlan(int n) : n(n) {
    std::lock_guard<std::mutex> lock(planner_mutex());
    in = fftw_alloc_real(static_cast<std::size_t>(n));
    out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  }
  ~FftwPlan() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  FftwPlan(const FftwPlan&) = delete;
  FftwPlan& operator=(const FftwPlan&) = delete;

  int n;
  double* in;
  fftw_complex* out;
  fftw_plan plan;
};

}  // namespace

FeatureMatrix chromagram(std::span<const float> pcm, int sample_rate, const ChromaConfig& config) {
  if (sample_rate <= 0) throw Error(ErrorCode::kInvalidArgument, "sample rate must be positive");
  if (pcm.empty()) throw Error(ErrorCode::kInvalidArgument, "empty pcm buffer");
  const int window = std::max(16, static_cast<int>(std::lround(config.window * sample_rate / 22050.0)));
  if (static_cast<int>(pcm.size()) < window) {
    throw Error(ErrorCode::kInvalidArgument, "pcm shorter than one analysis window");
  }
  const double hop = sample_rate / config.frame_rate;
  const int frames = static_cast<int>(std::ceil(pcm.size() / hop));

  std::vector<double> hann(static_cast<std::size_t>(window));
  for (int i = 0; i < window; ++i) {
    hann[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / window);
  }
  // Pitch class of every FFT bin inside the analysed range (-1 outside).
  std::vector<int> bin_class(static_cast<std::size_t>(window / 2 + 1), -1);
  for (int k = 1; k <= window / 2; ++k) {
    const double freq = static_cast<double>(k) * sample_rate / window;
    if (freq < config.min_freq || freq > config.max_freq) continue;
    const double midi = 69.0 + 12.0 * std::log2(freq / 440.0);
    const long pc = ((std::lround(midi) % 12) + 12) % 12;
    bin_class[static_cast<std::size_t>(k)] = static_cast<int>(pc);
  }

  FeatureMatrix raw;
  raw.frames = frames;
  raw.dims = 12;
  raw.frame_rate = config.frame_rate;
  raw.source = FeatureSource::kAudio;
  raw.data.assign(static_cast<std::size_t>(frames) * 12, 0.0f);

  FftwPlan fft(window);
  for (int f = 0; f < frames; ++f) {
    const long center = std::lround(f * hop);
    const long begin = center - window / 2;
    for (int i = 0; i < window; ++i) {
      const long idx = begin + i;
      const double s = idx >= 0 && idx < static_cast<long>(pcm.size()) ? pcm[static_cast<std::size_t>(idx)] : 0.0;
      fft.in[i] = s * hann[static_cast<std::size_t>(i)];
    }
    fftw_execute(fft.plan);
    std::array<double, 12> acc{};
    for (int k = 1; k <= window / 2; ++k) {
      const int pc = bin_class[static_cast<std::size_t>(k)];
      if (pc < 0) continue;
      const double re = fft.out[k][0], im = fft.out[k][1];
      acc[static_cast<std::size_t>(pc)] += re * re + im * im;
    }
    for (int d = 0; d < 12; ++d) raw.at(f, d) = static_cast<float>(acc[static_cast<std::size_t>(d)]);
  }

  // Three-tap smoothing across frames.
  FeatureMatrix out = raw;
  for (int f = 0; f < frames; ++f) {
    for (int d = 0; d < 12; ++d) {
      double v = 0.5 * raw.at(f, d);
      double w = 0.5;
      if (f > 0) v += 0.25 * raw.at(f - 1, d), w += 0.25;
      if (f + 1 < frames) v += 0.25 * raw.at(f + 1, d), w += 0.25;
      out.at(f, d) = static_cast<float>(v / w);
    }
  }
  normalize_frames(out, config.silence_threshold);
  return out;
}

FeatureMatrix chroma_from_midi(const PianoPerformance& perf, double frame_rate) {
  if (!(frame_rate > 0.0)) throw Error(ErrorCode::kInvalidArgument, "frame rate must be positive");
  FeatureMatrix m;
  m.dims = 12;
  m.frame_rate = frame_rate;
  m.source = FeatureSource::kMidiSynthetic;
  m.frames = static_cast<int>(std::ceil(std::max(perf.length, perf.end_time()) * frame_rate - 1e-9));
  m.data.assign(static_cast<std::size_t>(m.frames) * 12, 0.0f);
  for (const auto& n : perf.notes) {
    const int f0 = std::max(0, static_cast<int>(std::ceil(n.onset * frame_rate - 0.5)));
    for (int f = f0; f < m.frames; ++f) {
      const double t = (f + 0.5) / frame_rate;
      if (t >= n.offset()) break;
      if (t < n.onset) continue;
      m.at(f, n.pitch % 12) += static_cast<float>(n.velocity);
    }
  }
  normalize_frames(m, 0.0);
  return m;
}

PianoPerformance transpose(const PianoPerformance& perf, int semitones) {
  std::vector<NoteEvent> notes = perf.notes;
  for (auto& n : notes) n.pitch += semitones;
  return PianoPerformance::make(std::move(notes), perf.tempo_events, perf.length);
}

}  // namespace covergen
