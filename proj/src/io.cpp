#include "covergen/io.h"

#include <cstring>
#include <fstream>
#include <iterator>

#include "covergen/error.h"

namespace covergen {

namespace fs = std::filesystem;
using nlohmann::json;

json provenance(const std::string& config_hash) {
  return {{"version", COVERGEN_VERSION}, {"config_hash", config_hash}};
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what(), e.byte);
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  f << j.dump(2) << "\n";
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(f, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::kParse, path.string() + " line " + std::to_string(n) + ": " + e.what(), n);
    }
  }
  return out;
}

void write_jsonl(const fs::path& path, const std::vector<json>& lines) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  for (const auto& j : lines) f << j.dump() << "\n";
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

json beats_to_json(const BeatGrid& grid) {
  return {{"beats", grid.beat_times()}, {"downbeats", grid.downbeat_indices()}};
}

BeatGrid beats_from_json(const json& j) {
  try {
    auto beats = j.at("beats").get<std::vector<double>>();
    std::vector<int> downbeats;
    if (j.contains("downbeats")) {
      downbeats = j.at("downbeats").get<std::vector<int>>();
    } else {
      for (int i = 0; i < static_cast<int>(beats.size()); i += kBeatsPerBar) downbeats.push_back(i);
    }
    return BeatGrid(std::move(beats), std::move(downbeats));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("beat file: ") + e.what());
  }
}

BeatGrid read_beats(const fs::path& path) { return beats_from_json(read_json(path)); }

json time_map_to_json(const TimeMap& map, double cost) {
  json knots = json::array();
  for (const auto& [a, b] : map.knots()) knots.push_back({a, b});
  return {{"knots", knots}, {"cost", cost}};
}

TimeMap time_map_from_json(const json& j) {
  try {
    std::vector<std::pair<double, double>> knots;
    for (const auto& k : j.at("knots")) knots.emplace_back(k.at(0).get<double>(), k.at(1).get<double>());
    return TimeMap(std::move(knots));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("time map: ") + e.what());
  }
}

json contour_to_json(const MelodyContour& contour) {
  json pitches = json::array();
  for (const auto& p : contour.pitches) pitches.push_back(p ? json(*p) : json(nullptr));
  return {{"frame_rate", contour.frame_rate}, {"pitches", pitches}};
}

MelodyContour contour_from_json(const json& j) {
  try {
    MelodyContour c;
    c.frame_rate = j.at("frame_rate").get<double>();
    for (const auto& p : j.at("pitches")) {
      if (p.is_null()) {
        c.pitches.emplace_back(std::nullopt);
      } else {
        const double v = p.get<double>();
        if (v < 0.0 || v > 127.0) throw Error(ErrorCode::kInvalidArgument, "contour pitch outside 0..127");
        c.pitches.emplace_back(v);
      }
    }
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("contour: ") + e.what());
  }
}

namespace {
constexpr char kMagic[4] = {'C', 'G', 'F', 'M'};
}

std::vector<std::uint8_t> serialize_features(const FeatureMatrix& f) {
  const json header = {{"frames", f.frames},
                       {"dims", f.dims},
                       {"frame_rate", f.frame_rate},
                       {"source", feature_source_name(f.source)},
                       {"has_energy", !f.energy.empty()}};
  const std::string h = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  const auto len = static_cast<std::uint32_t>(h.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), h.begin(), h.end());
  auto put = [&](const std::vector<float>& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    out.insert(out.end(), p, p + v.size() * sizeof(float));
  };
  put(f.data);
  put(f.energy);
  return out;
}

FeatureMatrix parse_features(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::kParse, "not a feature matrix file", 0);
  }
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[4 + static_cast<std::size_t>(i)]) << (8 * i);
  if (8 + static_cast<std::size_t>(len) > bytes.size()) throw Error(ErrorCode::kParse, "truncated feature header", 4);
  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + len);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("feature header: ") + e.what(), 8);
  }
  FeatureMatrix f;
  f.frames = header.at("frames").get<int>();
  f.dims = header.at("dims").get<int>();
  f.frame_rate = header.at("frame_rate").get<double>();
  f.source = parse_feature_source(header.value("source", "external"));
  if (f.frames < 0 || f.dims <= 0 || !(f.frame_rate > 0.0)) {
    throw Error(ErrorCode::kParse, "invalid feature dimensions", 8);
  }
  const std::size_t n = static_cast<std::size_t>(f.frames) * static_cast<std::size_t>(f.dims);
  const std::size_t ne = header.value("has_energy", false) ? static_cast<std::size_t>(f.frames) : 0;
  const std::size_t off = 8 + len;
  if (bytes.size() != off + (n + ne) * sizeof(float)) {
    throw Error(ErrorCode::kParse, "feature payload size mismatch", off);
  }
  f.data.resize(n);
  std::memcpy(f.data.data(), bytes.data() + off, n * sizeof(float));
  f.energy.resize(ne);
  std::memcpy(f.energy.data(), bytes.data() + off + n * sizeof(float), ne * sizeof(float));
  return f;
}

void write_features(const fs::path& path, const FeatureMatrix& features) {
  const auto bytes = serialize_features(features);
  write_bytes(path, bytes);
}

FeatureMatrix read_features(const fs::path& path) {
  const auto bytes = read_bytes(path);
  return parse_features(bytes);
}

json token_record(const std::string& id, const TokenSequence& seq, const Vocabulary& vocab) {
  json names = json::array();
  for (int t : seq.ids) names.push_back(vocab.name(t));
  json spans = json::array();
  for (const auto& [a, b] : seq.bar_spans) spans.push_back({a, b});
  return {{"id", id}, {"tokens", names}, {"bar_spans", spans}};
}

TokenSequence tokens_from_record(const json& j, const Vocabulary& vocab) {
  TokenSequence seq;
  const auto& tokens = j.at("tokens");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& t = tokens[i];
    if (t.is_number_integer()) {
      const int id = t.get<int>();
      if (id < 0 || id >= vocab.size()) throw Error(ErrorCode::kParse, "token id out of range", i);
      seq.ids.push_back(id);
    } else {
      const auto id = vocab.find_name(t.get<std::string>());
      if (!id) throw Error(ErrorCode::kParse, "unknown token '" + t.get<std::string>() + "'", i);
      seq.ids.push_back(*id);
    }
  }
  if (j.contains("bar_spans")) {
    for (const auto& s : j.at("bar_spans")) seq.bar_spans.emplace_back(s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>());
  } else {
    seq.bar_spans = scan_bar_spans(seq.ids, vocab);
  }
  validate_structure(seq, vocab);
  return seq;
}

json vocab_to_json(const Vocabulary& vocab) {
  json names = json::array();
  for (int i = 0; i < vocab.size(); ++i) names.push_back(vocab.name(i));
  return {{"size", vocab.size()}, {"tokens", names}};
}

json block_to_json(const ConditionBlock& b) {
  return {{"bar", b.bar_index}, {"rows", b.rows}, {"dims", b.dims}, {"values", b.values}};
}

ConditionBlock block_from_json(const json& j) {
  ConditionBlock b;
  b.bar_index = j.at("bar").get<int>();
  b.rows = j.at("rows").get<int>();
  b.dims = j.at("dims").get<int>();
  b.values = j.at("values").get<std::vector<float>>();
  if (b.rows <= 0 || b.dims <= 0 || b.values.size() != static_cast<std::size_t>(b.rows) * b.dims) {
    throw Error(ErrorCode::kShapeMismatch, "condition block values do not match rows x dims");
  }
  return b;
}

json segment_to_json(const TrainingSegment& s) {
  json slots = json::array();
  for (const Slot& slot : s.slots) {
    slots.push_back(slot.is_condition() ? json{slot.block, slot.row} : json(slot.token));
  }
  json blocks = json::array();
  for (const auto& b : s.blocks) blocks.push_back(block_to_json(b));
  std::vector<int> mask(s.loss_mask.begin(), s.loss_mask.end());
  return {{"piece_id", s.piece_id}, {"kind", sequence_kind_name(s.kind)}, {"first_bar", s.first_bar},
          {"slots", slots},         {"loss_mask", mask},                  {"blocks", blocks}};
}

TrainingSegment segment_from_json(const json& j) {
  try {
    TrainingSegment s;
    s.piece_id = j.at("piece_id").get<std::string>();
    s.kind = parse_sequence_kind(j.at("kind").get<std::string>());
    s.first_bar = j.value("first_bar", 0);
    for (const auto& slot : j.at("slots")) {
      if (slot.is_array()) {
        s.slots.push_back({-1, slot.at(0).get<int>(), slot.at(1).get<int>()});
      } else {
        s.slots.push_back({slot.get<int>(), -1, -1});
      }
    }
    for (const auto& m : j.at("loss_mask")) s.loss_mask.push_back(m.get<int>() != 0);
    for (const auto& b : j.at("blocks")) s.blocks.push_back(block_from_json(b));
    if (s.loss_mask.size() != s.slots.size()) throw Error(ErrorCode::kShapeMismatch, "loss mask length mismatch");
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("segment record: ") + e.what());
  }
}

}  // namespace covergen
