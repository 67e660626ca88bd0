#include "covergen/midi_file.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <utility>

#include "covergen/error.h"

namespace covergen {

namespace {

constexpr std::uint32_t kDefaultTempoUs = 500000;  // 120 BPM

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ >= bytes_.size(); }

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>((bytes_[pos_] << 8) | bytes_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = (std::uint32_t{bytes_[pos_]} << 24) | (std::uint32_t{bytes_[pos_ + 1]} << 16) |
                      (std::uint32_t{bytes_[pos_ + 2]} << 8) | std::uint32_t{bytes_[pos_ + 3]};
    pos_ += 4;
    return v;
  }
  std::uint32_t varlen() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7F);
      if (!(b & 0x80)) return v;
    }
    fail("variable-length quantity longer than 4 bytes");
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) { take(n); }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::kParse, "midi: " + what + " at byte " + std::to_string(pos_), pos_);
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail("unexpected end of data");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct RawNote {
  std::uint64_t on_tick;
  std::uint64_t off_tick;
  int channel;
  int pitch;
  int velocity;
};

// Maps ticks to seconds through a sorted list of (tick, microseconds/quarter).
class TickClock {
 public:
  TickClock(std::vector<std::pair<std::uint64_t, std::uint32_t>> tempos, int tpq) : tpq_(tpq) {
    std::stable_sort(tempos.begin(), tempos.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    if (tempos.empty() || tempos.front().first != 0) tempos.insert(tempos.begin(), {0, kDefaultTempoUs});
    double t = 0.0;
    for (std::size_t i = 0; i < tempos.size(); ++i) {
      if (i > 0) {
        t += static_cast<double>(tempos[i].first - tempos[i - 1].first) * tempos[i - 1].second /
             (1e6 * tpq_);
      }
      segments_.push_back({tempos[i].first, t, tempos[i].second});
    }
  }

  double seconds(std::uint64_t tick) const {
    auto it = std::upper_bound(segments_.begin(), segments_.end(), tick,
                               [](std::uint64_t v, const Segment& s) { return v < s.tick; });
    const Segment& s = *(it - 1);
    return s.time + static_cast<double>(tick - s.tick) * s.us_per_quarter / (1e6 * tpq_);
  }

  const auto& segments() const { return segments_; }

 private:
  struct Segment {
    std::uint64_t tick;
    double time;
    std::uint32_t us_per_quarter;
  };
  int tpq_;
  std::vector<Segment> segments_;
};

}  // namespace

MidiReadResult parse_midi(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 14) r.fail("file too short for MThd");
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), "MThd")) r.fail("missing MThd chunk");
  const std::uint32_t header_len = r.u32();
  if (header_len < 6) r.fail("MThd length < 6");
  const std::uint16_t format = r.u16();
  const std::uint16_t ntracks = r.u16();
  const std::uint16_t division = r.u16();
  r.skip(header_len - 6);
  if (format > 1) throw Error(ErrorCode::kUnsupported, "midi: format 2 files are not supported");
  if (division & 0x8000) throw Error(ErrorCode::kUnsupported, "midi: SMPTE time division not supported");
  if (division == 0) r.fail("zero ticks per quarter");

  std::vector<std::pair<std::uint64_t, std::uint32_t>> tempos;
  std::vector<RawNote> notes;
  int dropped = 0;
  std::uint64_t max_tick = 0;

  for (int track = 0; track < ntracks; ++track) {
    const auto chunk_magic = r.take(4);
    const std::uint32_t len = r.u32();
    if (!std::equal(chunk_magic.begin(), chunk_magic.end(), "MTrk")) {
      r.skip(len);  // unknown chunk types are skipped
      --track;
      continue;
    }
    const std::size_t end = r.offset() + len;
    if (end > bytes.size()) r.fail("track chunk overruns file");
    std::uint64_t tick = 0;
    std::uint8_t running = 0;
    std::map<std::pair<int, int>, std::deque<std::pair<std::uint64_t, int>>> open;
    while (r.offset() < end) {
      tick += r.varlen();
      std::uint8_t status = r.u8();
      int first_data = -1;
      if (status < 0x80) {
        if (running == 0) r.fail("data byte without running status");
        first_data = status;
        status = running;
      }
      if (status == 0xFF) {
        const std::uint8_t type = r.u8();
        const std::uint32_t mlen = r.varlen();
        const auto data = r.take(mlen);
        if (type == 0x51) {
          if (mlen != 3) r.fail("tempo meta event must be 3 bytes");
          tempos.emplace_back(tick, (std::uint32_t{data[0]} << 16) | (std::uint32_t{data[1]} << 8) | data[2]);
        } else if (type == 0x58) {
          if (mlen < 2) r.fail("time signature meta event too short");
          if (data[0] != 4 || data[1] != 2) {
            throw Error(ErrorCode::kUnsupported,
                        "midi: time signature " + std::to_string(data[0]) + "/" +
                            std::to_string(1 << data[1]) + " is not 4/4");
          }
        } else if (type == 0x2F) {
          break;
        }
        continue;
      }
      if (status == 0xF0 || status == 0xF7) {
        r.skip(r.varlen());
        continue;
      }
      if (status >= 0xF0) r.fail("unexpected system message");
      running = status;
      const std::uint8_t d1 = first_data >= 0 ? static_cast<std::uint8_t>(first_data) : r.u8();
      const int kind = status & 0xF0;
      const int channel = status & 0x0F;
      if (kind == 0xC0 || kind == 0xD0) continue;
      const std::uint8_t d2 = r.u8();
      if (kind != 0x80 && kind != 0x90) continue;
      const int pitch = d1 & 0x7F;
      const int vel = d2 & 0x7F;
      max_tick = std::max(max_tick, tick);
      auto& q = open[{channel, pitch}];
      if (kind == 0x90 && vel > 0) {
        q.emplace_back(tick, vel);
      } else if (!q.empty()) {
        const auto [on, v] = q.front();
        q.pop_front();
        notes.push_back({on, tick, channel, pitch, v});
      }
    }
    if (r.offset() > end) r.fail("track events overrun chunk");
    r.skip(end - r.offset());
    // Notes never released end at the last event of the track.
    for (auto& [key, q] : open) {
      for (const auto& [on, v] : q) notes.push_back({on, std::max(tick, on), key.first, key.second, v});
    }
  }

  TickClock clock(tempos, division);
  std::vector<NoteEvent> events;
  for (const auto& n : notes) {
    if (n.channel == 9 || n.pitch < kMinPitch || n.pitch > kMaxPitch || n.off_tick <= n.on_tick) {
      ++dropped;
      continue;
    }
    const double on = clock.seconds(n.on_tick);
    events.push_back({n.pitch, on, clock.seconds(n.off_tick) - on, n.velocity});
  }
  std::vector<TempoEvent> tempo_events;
  for (const auto& s : clock.segments()) {
    const double bpm = 60e6 / s.us_per_quarter;
    if (!tempo_events.empty() && tempo_events.back().time == s.time) {
      tempo_events.back().bpm = bpm;
    } else {
      tempo_events.push_back({s.time, bpm});
    }
  }
  MidiReadResult result;
  result.performance =
      PianoPerformance::make(std::move(events), std::move(tempo_events), clock.seconds(max_tick));
  result.ticks_per_quarter = division;
  result.dropped_notes = dropped;
  return result;
}

MidiReadResult read_midi(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_midi(bytes);
}

namespace {

void put_varlen(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[5];
  int n = 0;
  buf[n++] = v & 0x7F;
  while (v >>= 7) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
  while (n) out.push_back(buf[--n]);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

}  // namespace

std::vector<std::uint8_t> serialize_midi(const PianoPerformance& perf, int tpq) {
  if (tpq <= 0 || tpq > 0x7FFF) throw Error(ErrorCode::kInvalidArgument, "bad ticks per quarter");
  std::vector<TempoEvent> tempos = perf.tempo_events;
  if (tempos.empty() || tempos.front().time > 0.0) tempos.insert(tempos.begin(), {0.0, 120.0});

  // Seconds -> ticks through the tempo map.
  std::vector<std::pair<double, double>> seg_ticks;  // (start time, start tick)
  double tick_acc = 0.0;
  for (std::size_t i = 0; i < tempos.size(); ++i) {
    if (i > 0) tick_acc += (tempos[i].time - tempos[i - 1].time) * tempos[i - 1].bpm / 60.0 * tpq;
    seg_ticks.emplace_back(tempos[i].time, tick_acc);
  }
  auto to_tick = [&](double t) -> std::uint64_t {
    std::size_t i = 0;
    while (i + 1 < tempos.size() && tempos[i + 1].time <= t) ++i;
    const double ticks = seg_ticks[i].second + (t - tempos[i].time) * tempos[i].bpm / 60.0 * tpq;
    return static_cast<std::uint64_t>(std::llround(std::max(0.0, ticks)));
  };

  struct Ev {
    std::uint64_t tick;
    int order;  // tempo < note-off < note-on at equal ticks
    std::vector<std::uint8_t> data;
  };
  std::vector<Ev> evs;
  for (const auto& t : tempos) {
    const auto us = static_cast<std::uint32_t>(std::llround(60e6 / t.bpm));
    evs.push_back({to_tick(t.time), 0,
                   {0xFF, 0x51, 0x03, static_cast<std::uint8_t>(us >> 16),
                    static_cast<std::uint8_t>(us >> 8), static_cast<std::uint8_t>(us)}});
  }
  evs.push_back({0, 0, {0xFF, 0x58, 0x04, 4, 2, 24, 8}});
  for (const auto& n : perf.notes) {
    const auto on = to_tick(n.onset);
    const auto off = std::max(on + 1, to_tick(n.offset()));
    evs.push_back({on, 2, {0x90, static_cast<std::uint8_t>(n.pitch), static_cast<std::uint8_t>(n.velocity)}});
    evs.push_back({off, 1, {0x80, static_cast<std::uint8_t>(n.pitch), 0}});
  }
  std::stable_sort(evs.begin(), evs.end(), [](const Ev& a, const Ev& b) {
    return a.tick != b.tick ? a.tick < b.tick : a.order < b.order;
  });

  std::vector<std::uint8_t> track;
  std::uint64_t last = 0;
  for (const auto& e : evs) {
    put_varlen(track, static_cast<std::uint32_t>(e.tick - last));
    last = e.tick;
    track.insert(track.end(), e.data.begin(), e.data.end());
  }
  put_varlen(track, 0);
  track.insert(track.end(), {0xFF, 0x2F, 0x00});

  std::vector<std::uint8_t> out = {'M', 'T', 'h', 'd'};
  put_u32(out, 6);
  out.insert(out.end(), {0, 0, 0, 1, static_cast<std::uint8_t>(tpq >> 8), static_cast<std::uint8_t>(tpq)});
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  put_u32(out, static_cast<std::uint32_t>(track.size()));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

void write_midi(const std::filesystem::path& path, const PianoPerformance& perf, int tpq) {
  const auto bytes = serialize_midi(perf, tpq);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace covergen
