// Standard MIDI File (format 0/1) reader and writer for PianoPerformance.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "covergen/core.h"

namespace covergen {

struct MidiReadResult {
  PianoPerformance performance;
  int ticks_per_quarter = 480;
  int dropped_notes = 0;  // drum channel or pitch outside the piano range
};

/// Parses SMF bytes. Throws Error(kParse) with the byte offset on malformed
/// input and Error(kUnsupported) for SMPTE timing or non-4/4 time signatures.
MidiReadResult parse_midi(std::span<const std::uint8_t> bytes);
MidiReadResult read_midi(const std::filesystem::path& path);

/// Serializes as a format-0 file with the given resolution.
std::vector<std::uint8_t> serialize_midi(const PianoPerformance& perf,
                                         int ticks_per_quarter = 480);
void write_midi(const std::filesystem::path& path, const PianoPerformance& perf,
                int ticks_per_quarter = 480);

}  // namespace covergen
