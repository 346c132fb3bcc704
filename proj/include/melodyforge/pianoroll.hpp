#pragma once

// Monophonic token grid: MIDI pitches 0-127 plus REST and END, one token
// per quantization step. Also note-name and frequency helpers.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "melodyforge/smf.hpp"

namespace melodyforge::roll {

inline constexpr int kPitchCount = 128;
inline constexpr int kRest = 128;
inline constexpr int kEnd = 129;
inline constexpr int kVocabSize = 130;
inline constexpr int kDefaultStepsPerQuarter = 4;  // sixteenth-note grid
inline constexpr double kDefaultTempoBpm = 120.0;
inline constexpr std::uint8_t kDecodeVelocity = 80;

struct Vocabulary {
  int size = kVocabSize;
  int steps_per_quarter = kDefaultStepsPerQuarter;
};

struct TokenSequence {
  std::vector<int> tokens;
  int steps_per_quarter = kDefaultStepsPerQuarter;

  bool operator==(const TokenSequence&) const = default;
};

/// Throws TokenOutOfRange for tokens >= kVocabSize or an END that is not last.
void validate(const TokenSequence& seq);

/// Skyline reduction of `notes` onto the grid. Steps start at tick 0; steps
/// with no sounding note become REST; END is appended.
TokenSequence to_token_sequence(std::span<const smf::NoteEvent> notes, std::uint16_t division,
                                int steps_per_quarter = kDefaultStepsPerQuarter);

std::vector<double> one_hot(int token, const Vocabulary& vocab = {});

/// Inverse of the grid encoding: runs of equal pitch tokens become one note,
/// REST advances time, END stops decoding. Produces a format-0 file whose
/// EndOfTrack sits at the end of the last decoded step.
smf::MidiFile decode_tokens(const TokenSequence& seq, double tempo_bpm = kDefaultTempoBpm,
                            std::uint16_t division = 480);

/// Tick at which grid step `step` starts.
smf::Tick step_to_tick(std::uint64_t step, std::uint16_t division, int steps_per_quarter);
double seconds_per_step(double tempo_bpm, int steps_per_quarter);

double pitch_to_frequency(int pitch);
std::string pitch_to_name(int pitch);
/// Accepts "A4", "C#4", "Db4", "C-1"; also "REST"/"R" which map to kRest.
int name_to_token(std::string_view name);
/// Comma or whitespace separated note names.
std::vector<int> parse_note_list(std::string_view text);
std::string token_name(int token);

/// Newline-delimited integers.
std::string tokens_to_text(const TokenSequence& seq);
TokenSequence tokens_from_text(std::string_view text, int steps_per_quarter = kDefaultStepsPerQuarter);

}  // namespace melodyforge::roll
