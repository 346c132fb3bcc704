#include "melodyforge/smf.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <tuple>
#include <string>
#include <utility>

#include "melodyforge/error.hpp"

namespace melodyforge::smf {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool done() const { return pos_ >= bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t pos() const { return pos_; }

  std::uint8_t peek() const {
    need(1);
    return bytes_[pos_];
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16be() {
    need(2);
    auto v = static_cast<std::uint16_t>(bytes_[pos_] << 8 | bytes_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32be() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = v << 8 | bytes_[pos_ + i];
    pos_ += 4;
    return v;
  }
  std::uint32_t vlq() {
    auto r = read_vlq(bytes_.subspan(pos_));
    pos_ += r.consumed;
    return r.value;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(Errc::UnexpectedEof, "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_));
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void put_u16be(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

void put_u32be(Bytes& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift & 0xFF));
}

void put_vlq(Bytes& out, std::uint32_t v) {
  auto enc = write_vlq(v);
  out.insert(out.end(), enc.begin(), enc.end());
}

// Data bytes that follow a channel status byte.
int channel_data_length(std::uint8_t status) {
  switch (status & 0xF0) {
    case 0xC0:
    case 0xD0: return 1;
    default: return 2;
  }
}

Payload decode_channel(std::uint8_t status, std::uint8_t d1, std::uint8_t d2) {
  auto ch = static_cast<std::uint8_t>(status & 0x0F);
  switch (status & 0xF0) {
    case 0x80: return NoteOff{ch, d1, d2};
    case 0x90:
      if (d2 == 0) return NoteOff{ch, d1, 0};
      return NoteOn{ch, d1, d2};
    case 0xC0: return ProgramChange{ch, d1};
    case 0xD0: return OtherChannel{status, {d1}};
    default: return OtherChannel{status, {d1, d2}};
  }
}

Track parse_track(std::span<const std::uint8_t> chunk) {
  Reader r(chunk);
  Track track;
  Tick tick = 0;
  std::uint8_t running = 0;
  while (!r.done()) {
    tick += r.vlq();
    std::uint8_t status = r.peek();
    if (status < 0x80) {
      if (running == 0) throw Error(Errc::InvariantViolation, "data byte without running status at track offset " + std::to_string(r.pos()));
      status = running;
    } else {
      r.u8();
    }

    if (status == 0xFF) {
      std::uint8_t type = r.u8();
      std::uint32_t len = r.vlq();
      auto data = r.take(len);
      if (type == 0x2F) {
        track.push_back({tick, EndOfTrack{}});
        return track;  // anything after EndOfTrack is ignored
      }
      if (type == 0x51 && len == 3) {
        std::uint32_t us = static_cast<std::uint32_t>(data[0]) << 16 | data[1] << 8 | data[2];
        if (us > 0) {
          track.push_back({tick, SetTempo{us}});
          continue;
        }
      }
      if (type == 0x58 && len == 4) {
        track.push_back({tick, TimeSignature{data[0], data[1], data[2], data[3]}});
        continue;
      }
      track.push_back({tick, OtherMeta{type, Bytes(data.begin(), data.end())}});
    } else if (status == 0xF0 || status == 0xF7) {
      std::uint32_t len = r.vlq();
      auto data = r.take(len);
      track.push_back({tick, SysEx{status, Bytes(data.begin(), data.end())}});
    } else if (status >= 0xF1) {
      throw Error(Errc::InvariantViolation, "system real-time/common status in file track");
    } else {
      running = status;
      std::uint8_t d1 = r.u8();
      std::uint8_t d2 = channel_data_length(status) == 2 ? r.u8() : 0;
      if (d1 >= 0x80 || d2 >= 0x80) throw Error(Errc::InvariantViolation, "channel data byte with high bit set");
      track.push_back({tick, decode_channel(status, d1, d2)});
    }
  }
  // Tolerate a missing EndOfTrack: close the track at its last tick.
  track.push_back({tick, EndOfTrack{}});
  return track;
}

void check(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::InvariantViolation, what);
}

void encode_event(Bytes& out, const Payload& payload) {
  std::visit(
      overloaded{
          [&](const NoteOn& e) { out.insert(out.end(), {static_cast<std::uint8_t>(0x90 | e.channel), e.pitch, e.velocity}); },
          [&](const NoteOff& e) { out.insert(out.end(), {static_cast<std::uint8_t>(0x80 | e.channel), e.pitch, e.velocity}); },
          [&](const SetTempo& e) {
            out.insert(out.end(), {0xFF, 0x51, 0x03, static_cast<std::uint8_t>(e.us_per_quarter >> 16 & 0xFF),
                                   static_cast<std::uint8_t>(e.us_per_quarter >> 8 & 0xFF), static_cast<std::uint8_t>(e.us_per_quarter & 0xFF)});
          },
          [&](const ProgramChange& e) { out.insert(out.end(), {static_cast<std::uint8_t>(0xC0 | e.channel), e.program}); },
          [&](const TimeSignature& e) {
            out.insert(out.end(), {0xFF, 0x58, 0x04, e.numerator, e.denominator_power, e.clocks_per_click, e.thirty_seconds_per_quarter});
          },
          [&](const EndOfTrack&) { out.insert(out.end(), {0xFF, 0x2F, 0x00}); },
          [&](const OtherMeta& e) {
            out.insert(out.end(), {0xFF, e.type});
            put_vlq(out, static_cast<std::uint32_t>(e.data.size()));
            out.insert(out.end(), e.data.begin(), e.data.end());
          },
          [&](const OtherChannel& e) {
            out.push_back(e.status);
            out.insert(out.end(), e.data.begin(), e.data.end());
          },
          [&](const SysEx& e) {
            out.push_back(e.status);
            put_vlq(out, static_cast<std::uint32_t>(e.data.size()));
            out.insert(out.end(), e.data.begin(), e.data.end());
          },
      },
      payload);
}

void validate_payload(const Payload& payload) {
  std::visit(overloaded{
                 [](const NoteOn& e) {
                   check(e.channel <= 15, "NoteOn channel > 15");
                   check(e.pitch <= 127, "NoteOn pitch > 127");
                   check(e.velocity <= 127, "NoteOn velocity > 127");
                 },
                 [](const NoteOff& e) {
                   check(e.channel <= 15, "NoteOff channel > 15");
                   check(e.pitch <= 127, "NoteOff pitch > 127");
                   check(e.velocity <= 127, "NoteOff velocity > 127");
                 },
                 [](const SetTempo& e) { check(e.us_per_quarter > 0 && e.us_per_quarter < (1u << 24), "SetTempo out of range"); },
                 [](const ProgramChange& e) {
                   check(e.channel <= 15, "ProgramChange channel > 15");
                   check(e.program <= 127, "ProgramChange program > 127");
                 },
                 [](const TimeSignature&) {},
                 [](const EndOfTrack&) {},
                 [](const OtherMeta& e) {
                   check(e.type < 0x80, "meta type byte >= 0x80");
                   check(e.type != 0x2F, "EndOfTrack encoded as OtherMeta");
                   check(e.data.size() <= kMaxVlq, "meta payload too long");
                 },
                 [](const OtherChannel& e) {
                   check(e.status >= 0x80 && e.status < 0xF0, "OtherChannel status outside 0x80-0xEF");
                   check(e.data.size() == static_cast<std::size_t>(channel_data_length(e.status)), "OtherChannel data length");
                   for (auto b : e.data) check(b < 0x80, "OtherChannel data byte >= 0x80");
                 },
                 [](const SysEx& e) {
                   check(e.status == 0xF0 || e.status == 0xF7, "SysEx status must be F0 or F7");
                   check(e.data.size() <= kMaxVlq, "sysex payload too long");
                 },
             },
             payload);
}

}  // namespace

VlqResult read_vlq(std::span<const std::uint8_t> bytes) {
  std::uint32_t value = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    if (i >= bytes.size()) throw Error(Errc::UnexpectedEof, "variable-length quantity runs past end of data");
    value = value << 7 | (bytes[i] & 0x7F);
    if ((bytes[i] & 0x80) == 0) return {value, i + 1};
  }
  throw Error(Errc::UnterminatedVlq, "no terminating byte within 4 bytes");
}

Bytes write_vlq(std::uint32_t value) {
  if (value > kMaxVlq) throw Error(Errc::ValueTooLarge, std::to_string(value) + " does not fit in 28 bits");
  Bytes out;
  out.push_back(static_cast<std::uint8_t>(value & 0x7F));
  while (value >>= 7) out.push_back(static_cast<std::uint8_t>(0x80 | (value & 0x7F)));
  std::reverse(out.begin(), out.end());
  return out;
}

MidiFile parse_smf(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(bytes.begin(), bytes.begin() + 4, "MThd")) throw Error(Errc::BadMagic, "missing MThd header");
  Reader r(bytes);
  r.take(4);
  if (r.remaining() < 4) throw Error(Errc::TruncatedChunk, "MThd length field missing");
  std::uint32_t header_len = r.u32be();
  if (header_len < 6 || r.remaining() < header_len) throw Error(Errc::TruncatedChunk, "MThd shorter than 6 bytes");
  Reader header(r.take(header_len));

  MidiFile file;
  file.format = header.u16be();
  std::uint16_t ntracks = header.u16be();
  std::uint16_t division = header.u16be();
  if (file.format > 2) throw Error(Errc::InvariantViolation, "unknown SMF format " + std::to_string(file.format));
  if (division & 0x8000) throw Error(Errc::UnsupportedSmpteDivision, "SMPTE time division");
  if (division == 0) throw Error(Errc::InvariantViolation, "division is zero");
  file.division = division;

  while (r.remaining() > 0) {
    if (r.remaining() < 8) {
      // Trailing padding shorter than a chunk header.
      if (file.tracks.size() >= ntracks) break;
      throw Error(Errc::TruncatedChunk, "incomplete chunk header");
    }
    auto tag = r.take(4);
    std::uint32_t len = r.u32be();
    if (r.remaining() < len) throw Error(Errc::TruncatedChunk, "chunk declares " + std::to_string(len) + " bytes, " + std::to_string(r.remaining()) + " available");
    auto body = r.take(len);
    if (!std::equal(tag.begin(), tag.end(), "MTrk")) continue;  // unknown chunk types are skipped
    try {
      file.tracks.push_back(parse_track(body));
    } catch (const Error& e) {
      if (e.code() == Errc::UnexpectedEof) throw Error(Errc::TruncatedChunk, std::string("track ") + std::to_string(file.tracks.size()) + ": " + e.what());
      throw;
    }
  }
  // Extra MTrk chunks beyond the declared count are kept; missing ones are an error.
  if (file.tracks.size() < ntracks) {
    throw Error(Errc::TrackCountMismatch, "header declares " + std::to_string(ntracks) + " tracks, found " + std::to_string(file.tracks.size()));
  }
  return file;
}

void validate(const MidiFile& file) {
  check(file.format <= 2, "format must be 0, 1 or 2");
  check(file.division > 0 && file.division < 0x8000, "division must be a positive PPQ value");
  check(file.tracks.size() <= 0xFFFF, "too many tracks");
  for (const auto& track : file.tracks) {
    Tick prev = 0;
    for (std::size_t i = 0; i < track.size(); ++i) {
      const auto& ev = track[i];
      check(ev.tick >= prev, "events out of tick order");
      check(ev.tick - prev <= kMaxVlq, "delta time exceeds 28 bits");
      prev = ev.tick;
      if (std::holds_alternative<EndOfTrack>(ev.payload)) check(i + 1 == track.size(), "EndOfTrack before last event");
      validate_payload(ev.payload);
    }
  }
}

Bytes serialize_smf(const MidiFile& file) {
  validate(file);
  Bytes out{'M', 'T', 'h', 'd'};
  put_u32be(out, 6);
  put_u16be(out, file.format);
  put_u16be(out, static_cast<std::uint16_t>(file.tracks.size()));
  put_u16be(out, file.division);

  for (const auto& track : file.tracks) {
    Bytes body;
    Tick prev = 0;
    for (const auto& ev : track) {
      put_vlq(body, static_cast<std::uint32_t>(ev.tick - prev));
      prev = ev.tick;
      encode_event(body, ev.payload);
    }
    if (track.empty() || !std::holds_alternative<EndOfTrack>(track.back().payload)) {
      put_vlq(body, 0);
      encode_event(body, EndOfTrack{});
    }
    out.insert(out.end(), {'M', 'T', 'r', 'k'});
    put_u32be(out, static_cast<std::uint32_t>(body.size()));
    out.insert(out.end(), body.begin(), body.end());
  }
  return out;
}

std::vector<NoteEvent> extract_notes(const MidiFile& file) {
  struct Open {
    Tick onset;
    std::uint8_t velocity;
  };
  std::vector<NoteEvent> notes;
  for (const auto& track : file.tracks) {
    std::map<std::pair<int, int>, std::deque<Open>> open;  // (channel, pitch) -> FIFO
    auto close = [&](int channel, int pitch, const Open& o, Tick end) {
      Tick dur = end > o.onset ? end - o.onset : 1;
      notes.push_back({static_cast<std::uint8_t>(pitch), o.onset, dur, o.velocity, static_cast<std::uint8_t>(channel)});
    };
    for (const auto& ev : track) {
      if (const auto* on = std::get_if<NoteOn>(&ev.payload)) {
        open[{on->channel, on->pitch}].push_back({ev.tick, on->velocity});
      } else if (const auto* off = std::get_if<NoteOff>(&ev.payload)) {
        auto it = open.find({off->channel, off->pitch});
        if (it == open.end() || it->second.empty()) continue;  // orphan
        close(off->channel, off->pitch, it->second.front(), ev.tick);
        it->second.pop_front();
      }
    }
    Tick end = track.empty() ? 0 : track.back().tick;
    for (const auto& [key, queue] : open)
      for (const auto& o : queue) close(key.first, key.second, o, end);
  }
  std::stable_sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
    return std::tie(a.onset_tick, a.pitch, a.channel, a.duration_tick) < std::tie(b.onset_tick, b.pitch, b.channel, b.duration_tick);
  });
  return notes;
}

std::vector<TempoChange> tempo_map(const MidiFile& file) {
  std::vector<TempoChange> map;
  for (const auto& track : file.tracks)
    for (const auto& ev : track)
      if (const auto* t = std::get_if<SetTempo>(&ev.payload)) map.push_back({ev.tick, t->us_per_quarter});
  std::stable_sort(map.begin(), map.end(), [](const TempoChange& a, const TempoChange& b) { return a.tick < b.tick; });
  return map;
}

double tick_to_seconds(Tick tick, std::span<const TempoChange> map, std::uint16_t division) {
  double seconds = 0.0;
  Tick seg_start = 0;
  double tempo = kDefaultTempo;
  for (const auto& change : map) {
    if (change.tick >= tick) break;
    seconds += static_cast<double>(change.tick - seg_start) * tempo;
    seg_start = change.tick;
    tempo = change.us_per_quarter;
  }
  seconds += static_cast<double>(tick - seg_start) * tempo;
  return seconds / (1e6 * division);
}

Tick last_tick(const MidiFile& file) {
  Tick last = 0;
  for (const auto& track : file.tracks)
    if (!track.empty()) last = std::max(last, track.back().tick);
  return last;
}

double duration_seconds(const MidiFile& file) {
  auto map = tempo_map(file);
  return tick_to_seconds(last_tick(file), map, file.division);
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace melodyforge::smf
