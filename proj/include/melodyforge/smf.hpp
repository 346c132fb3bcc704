#pragma once

// Standard MIDI File codec: chunk parsing, VLQ delta times, note extraction
// and tempo-aware tick/seconds conversion.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace melodyforge::smf {

using Bytes = std::vector<std::uint8_t>;
using Tick = std::uint64_t;

inline constexpr std::uint32_t kMaxVlq = (1u << 28) - 1;
inline constexpr std::uint32_t kDefaultTempo = 500000;  // us per quarter, 120 BPM

struct VlqResult {
  std::uint32_t value;
  std::size_t consumed;
};

VlqResult read_vlq(std::span<const std::uint8_t> bytes);
Bytes write_vlq(std::uint32_t value);

struct NoteOn {
  std::uint8_t channel, pitch, velocity;
  bool operator==(const NoteOn&) const = default;
};
struct NoteOff {
  std::uint8_t channel, pitch, velocity;
  bool operator==(const NoteOff&) const = default;
};
struct SetTempo {
  std::uint32_t us_per_quarter;
  bool operator==(const SetTempo&) const = default;
};
struct ProgramChange {
  std::uint8_t channel, program;
  bool operator==(const ProgramChange&) const = default;
};
struct TimeSignature {
  std::uint8_t numerator;
  std::uint8_t denominator_power;
  std::uint8_t clocks_per_click = 24;
  std::uint8_t thirty_seconds_per_quarter = 8;
  bool operator==(const TimeSignature&) const = default;
};
struct EndOfTrack {
  bool operator==(const EndOfTrack&) const = default;
};
struct OtherMeta {
  std::uint8_t type;
  Bytes data;
  bool operator==(const OtherMeta&) const = default;
};
/// Channel voice messages without a dedicated payload (control change,
/// pitch bend, aftertouch). `data` holds the 1 or 2 data bytes.
struct OtherChannel {
  std::uint8_t status;
  Bytes data;
  bool operator==(const OtherChannel&) const = default;
};
/// F0 or F7 system exclusive packet, stored verbatim.
struct SysEx {
  std::uint8_t status;
  Bytes data;
  bool operator==(const SysEx&) const = default;
};

using Payload = std::variant<NoteOn, NoteOff, SetTempo, ProgramChange, TimeSignature,
                             EndOfTrack, OtherMeta, OtherChannel, SysEx>;

struct TrackEvent {
  Tick tick = 0;  // absolute
  Payload payload;
  bool operator==(const TrackEvent&) const = default;
};

using Track = std::vector<TrackEvent>;

struct MidiFile {
  std::uint16_t format = 1;
  std::uint16_t division = 480;  // ticks per quarter note
  std::vector<Track> tracks;
  bool operator==(const MidiFile&) const = default;
};

struct NoteEvent {
  std::uint8_t pitch;
  Tick onset_tick;
  Tick duration_tick;
  std::uint8_t velocity;
  std::uint8_t channel;
  bool operator==(const NoteEvent&) const = default;
};

struct TempoChange {
  Tick tick;
  std::uint32_t us_per_quarter;
  bool operator==(const TempoChange&) const = default;
};

MidiFile parse_smf(std::span<const std::uint8_t> bytes);
Bytes serialize_smf(const MidiFile& file);

/// Throws Errc::InvariantViolation naming the first offending field.
void validate(const MidiFile& file);

std::vector<NoteEvent> extract_notes(const MidiFile& file);

/// SetTempo events of every track, ordered by tick.
std::vector<TempoChange> tempo_map(const MidiFile& file);

double tick_to_seconds(Tick tick, std::span<const TempoChange> tempo_map, std::uint16_t division);

/// Largest event tick across all tracks (EndOfTrack included).
Tick last_tick(const MidiFile& file);
double duration_seconds(const MidiFile& file);

Bytes read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace melodyforge::smf
