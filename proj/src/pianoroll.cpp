#include "melodyforge/pianoroll.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

#include "melodyforge/error.hpp"

namespace melodyforge::roll {

namespace {

constexpr std::array<const char*, 12> kSharpNames{"C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"};

void check_pitch(int pitch) {
  if (pitch < 0 || pitch >= kPitchCount) throw Error(Errc::PitchOutOfRange, "pitch " + std::to_string(pitch));
}

// round(tick * spq / division), halves rounding up
std::uint64_t quantize(smf::Tick tick, std::uint16_t division, int spq) {
  return (2 * tick * static_cast<std::uint64_t>(spq) + division) / (2 * static_cast<std::uint64_t>(division));
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

}  // namespace

void validate(const TokenSequence& seq) {
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    int t = seq.tokens[i];
    if (t < 0 || t >= kVocabSize) throw Error(Errc::TokenOutOfRange, "token " + std::to_string(t) + " at position " + std::to_string(i));
    if (t == kEnd && i + 1 != seq.tokens.size()) throw Error(Errc::TokenOutOfRange, "END before the last position");
  }
  if (seq.steps_per_quarter <= 0) throw Error(Errc::InvariantViolation, "grid must be positive");
}

TokenSequence to_token_sequence(std::span<const smf::NoteEvent> notes, std::uint16_t division, int steps_per_quarter) {
  if (notes.empty()) throw Error(Errc::EmptyInput, "no notes to encode");
  if (division == 0 || steps_per_quarter <= 0) throw Error(Errc::InvariantViolation, "division and grid must be positive");

  struct Span {
    std::uint64_t begin, end;
    int pitch;
  };
  std::vector<Span> spans;
  spans.reserve(notes.size());
  std::uint64_t total = 0;
  for (const auto& n : notes) {
    std::uint64_t b = quantize(n.onset_tick, division, steps_per_quarter);
    std::uint64_t e = quantize(n.onset_tick + n.duration_tick, division, steps_per_quarter);
    e = std::max(e, b + 1);  // every note occupies at least one step
    spans.push_back({b, e, n.pitch});
    total = std::max(total, e);
  }

  std::vector<int> steps(total, kRest);
  for (const auto& s : spans)
    for (auto k = s.begin; k < s.end; ++k)
      if (steps[k] == kRest || steps[k] < s.pitch) steps[k] = s.pitch;

  TokenSequence seq{std::move(steps), steps_per_quarter};
  seq.tokens.push_back(kEnd);
  return seq;
}

std::vector<double> one_hot(int token, const Vocabulary& vocab) {
  if (token < 0 || token >= vocab.size) throw Error(Errc::TokenOutOfRange, "token " + std::to_string(token));
  std::vector<double> v(static_cast<std::size_t>(vocab.size), 0.0);
  v[static_cast<std::size_t>(token)] = 1.0;
  return v;
}

smf::Tick step_to_tick(std::uint64_t step, std::uint16_t division, int steps_per_quarter) {
  return step * division / static_cast<std::uint64_t>(steps_per_quarter);
}

double seconds_per_step(double tempo_bpm, int steps_per_quarter) { return 60.0 / tempo_bpm / steps_per_quarter; }

smf::MidiFile decode_tokens(const TokenSequence& seq, double tempo_bpm, std::uint16_t division) {
  validate(seq);
  if (!(tempo_bpm > 0.0)) throw Error(Errc::InvariantViolation, "tempo must be positive");
  const int spq = seq.steps_per_quarter;
  auto us = static_cast<std::uint32_t>(std::lround(60e6 / tempo_bpm));

  smf::Track track;
  track.push_back({0, smf::SetTempo{us}});
  int held = -1;  // pitch currently sounding
  std::uint64_t step = 0;
  auto release = [&] {
    if (held >= 0) track.push_back({step_to_tick(step, division, spq), smf::NoteOff{0, static_cast<std::uint8_t>(held), 0}});
    held = -1;
  };
  for (int t : seq.tokens) {
    if (t == kEnd) break;
    if (t != held) {
      release();
      if (t != kRest) {
        track.push_back({step_to_tick(step, division, spq), smf::NoteOn{0, static_cast<std::uint8_t>(t), kDecodeVelocity}});
        held = t;
      }
    }
    ++step;
  }
  release();
  track.push_back({step_to_tick(step, division, spq), smf::EndOfTrack{}});
  return smf::MidiFile{0, division, {std::move(track)}};
}

double pitch_to_frequency(int pitch) {
  check_pitch(pitch);
  return 440.0 * std::pow(2.0, (pitch - 69) / 12.0);
}

std::string pitch_to_name(int pitch) {
  check_pitch(pitch);
  return std::string(kSharpNames[static_cast<std::size_t>(pitch % 12)]) + std::to_string(pitch / 12 - 1);
}

int name_to_token(std::string_view raw) {
  std::string name = upper(raw);
  if (name == "REST" || name == "R") return kRest;
  auto bad = [&] { return Error(Errc::InvalidNoteName, "'" + std::string(raw) + "'"); };
  if (name.size() < 2) throw bad();

  static constexpr std::array<int, 7> kLetterOffsets{9, 11, 0, 2, 4, 5, 7};  // A..G
  char letter = name[0];
  if (letter < 'A' || letter > 'G') throw bad();
  int pc = kLetterOffsets[static_cast<std::size_t>(letter - 'A')];
  std::size_t i = 1;
  if (name[i] == '#') {
    ++pc;
    ++i;
  } else if (name[i] == 'B' && i + 1 < name.size()) {  // flat; "B" as a letter is handled above
    --pc;
    ++i;
  }
  int octave = 0;
  auto [ptr, ec] = std::from_chars(name.data() + i, name.data() + name.size(), octave);
  if (ec != std::errc{} || ptr != name.data() + name.size() || i == name.size()) throw bad();
  int pitch = (octave + 1) * 12 + pc;
  if (pitch < 0 || pitch >= kPitchCount) throw Error(Errc::InvalidNoteName, "'" + std::string(raw) + "' is outside MIDI range");
  return pitch;
}

std::vector<int> parse_note_list(std::string_view text) {
  std::vector<int> out;
  std::string item;
  auto flush = [&] {
    if (!item.empty()) out.push_back(name_to_token(item));
    item.clear();
  };
  for (char ch : text) {
    if (ch == ',' || std::isspace(static_cast<unsigned char>(ch))) flush();
    else item.push_back(ch);
  }
  flush();
  return out;
}

std::string token_name(int token) {
  if (token == kRest) return "REST";
  if (token == kEnd) return "END";
  return pitch_to_name(token);
}

std::string tokens_to_text(const TokenSequence& seq) {
  std::string out;
  for (int t : seq.tokens) out += std::to_string(t) + '\n';
  return out;
}

TokenSequence tokens_from_text(std::string_view text, int steps_per_quarter) {
  TokenSequence seq{{}, steps_per_quarter};
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    int t = 0;
    auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), t);
    if (ec != std::errc{}) throw Error(Errc::TokenOutOfRange, "not an integer: " + line);
    seq.tokens.push_back(t);
  }
  validate(seq);
  return seq;
}

}  // namespace melodyforge::roll
