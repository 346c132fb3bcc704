#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "melodyforge/error.hpp"
#include "melodyforge/smf.hpp"
#include "melodyforge/trainer.hpp"
#include "oracles.hpp"

using namespace melodyforge;
using namespace melodyforge::smf;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return Errc::InvariantViolation;
}

Bytes header(std::uint16_t format, std::uint16_t ntracks, std::uint16_t division) {
  return {'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, static_cast<std::uint8_t>(format), 0, static_cast<std::uint8_t>(ntracks),
          static_cast<std::uint8_t>(division >> 8), static_cast<std::uint8_t>(division & 0xFF)};
}

Bytes with_track(Bytes file, const Bytes& body) {
  auto n = static_cast<std::uint32_t>(body.size());
  file.insert(file.end(), {'M', 'T', 'r', 'k', static_cast<std::uint8_t>(n >> 24), static_cast<std::uint8_t>(n >> 16),
                           static_cast<std::uint8_t>(n >> 8), static_cast<std::uint8_t>(n)});
  file.insert(file.end(), body.begin(), body.end());
  return file;
}

}  // namespace

TEST_CASE("vlq known encodings") {
  CHECK(read_vlq(Bytes{0x00}).value == 0);
  CHECK(read_vlq(Bytes{0x7F}).value == 127);
  auto two = read_vlq(Bytes{0x81, 0x00});
  CHECK(two.value == 128);
  CHECK(two.consumed == 2);
  auto max = read_vlq(Bytes{0xFF, 0xFF, 0xFF, 0x7F});
  CHECK(max.value == 268435455u);
  CHECK(max.consumed == 4);
  CHECK(write_vlq(0x3FFF) == Bytes{0xFF, 0x7F});
  CHECK(write_vlq(0x4000) == Bytes{0x81, 0x80, 0x00});
}

TEST_CASE("vlq trailing bytes are not consumed") {
  auto r = read_vlq(Bytes{0x83, 0x60, 0x90, 0x40});
  CHECK(r.value == 480);
  CHECK(r.consumed == 2);
}

TEST_CASE("vlq errors") {
  CHECK(code_of([] { read_vlq(Bytes{0x80, 0x80, 0x80, 0x80, 0x00}); }) == Errc::UnterminatedVlq);
  CHECK(code_of([] { read_vlq(Bytes{0x81, 0x80}); }) == Errc::UnexpectedEof);
  CHECK(code_of([] { read_vlq(Bytes{}); }) == Errc::UnexpectedEof);
  CHECK(code_of([] { write_vlq(kMaxVlq + 1); }) == Errc::ValueTooLarge);
}

TEST_CASE("vlq agrees with bit-slicing oracle") {
  std::mt19937_64 g(7);
  for (int i = 0; i < 20000; ++i) {
    // bias towards group boundaries
    const int bits = static_cast<int>(g() % 29);
    std::uint32_t v = bits == 0 ? 0 : static_cast<std::uint32_t>(g() & ((1ull << bits) - 1));
    auto enc = write_vlq(v);
    REQUIRE(enc == oracle::vlq(v));
    CHECK(enc.size() <= 4);
    auto dec = read_vlq(enc);
    CHECK(dec.value == v);
    CHECK(dec.consumed == enc.size());
  }
}

TEST_CASE("parse minimal file with running status") {
  // NoteOn C4, running-status NoteOn velocity 0, EndOfTrack
  Bytes f = with_track(header(0, 1, 96), {0x00, 0x90, 0x3C, 0x64, 0x60, 0x3C, 0x00, 0x00, 0xFF, 0x2F, 0x00});
  MidiFile m = parse_smf(f);
  CHECK(m.format == 0);
  CHECK(m.division == 96);
  REQUIRE(m.tracks.size() == 1);
  REQUIRE(m.tracks[0].size() == 3);
  CHECK(m.tracks[0][0] == TrackEvent{0, NoteOn{0, 60, 100}});
  CHECK(m.tracks[0][1] == TrackEvent{96, NoteOff{0, 60, 0}});
  CHECK(std::holds_alternative<EndOfTrack>(m.tracks[0][2].payload));
  auto notes = extract_notes(m);
  REQUIRE(notes.size() == 1);
  CHECK(notes[0] == NoteEvent{60, 0, 96, 100, 0});
}

TEST_CASE("running status survives meta events") {
  Bytes f = with_track(header(0, 1, 96),
                       {0x00, 0x91, 0x40, 0x50, 0x00, 0xFF, 0x01, 0x01, 'x', 0x10, 0x40, 0x00, 0x00, 0xFF, 0x2F, 0x00});
  auto m = parse_smf(f);
  REQUIRE(m.tracks[0].size() == 4);
  CHECK(m.tracks[0][2] == TrackEvent{16, NoteOff{1, 64, 0}});
}

TEST_CASE("unknown metas and sysex are preserved") {
  Bytes f = with_track(header(0, 1, 480), {0x00, 0xFF, 0x7F, 0x03, 1, 2, 3, 0x00, 0xF0, 0x02, 0x7E, 0xF7, 0x00, 0xFF, 0x2F, 0x00});
  auto m = parse_smf(f);
  CHECK(m.tracks[0][0].payload == Payload{OtherMeta{0x7F, {1, 2, 3}}});
  CHECK(m.tracks[0][1].payload == Payload{SysEx{0xF0, {0x7E, 0xF7}}});
  CHECK(serialize_smf(m) == f);
}

TEST_CASE("header errors") {
  CHECK(code_of([] { parse_smf(Bytes{'R', 'I', 'F', 'F', 0, 0, 0, 6}); }) == Errc::BadMagic);
  CHECK(code_of([] { parse_smf(Bytes{'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0}); }) == Errc::TruncatedChunk);
  CHECK(code_of([] { parse_smf(header(0, 1, 0xE728)); }) == Errc::UnsupportedSmpteDivision);
  CHECK(code_of([] { parse_smf(header(1, 2, 480)); }) == Errc::TrackCountMismatch);
}

TEST_CASE("truncated track chunk") {
  Bytes f = with_track(header(0, 1, 480), {0x00, 0x90, 0x3C, 0x64, 0x00, 0xFF, 0x2F, 0x00});
  Bytes cut(f.begin(), f.end() - 3);
  CHECK(code_of([&] { parse_smf(cut); }) == Errc::TruncatedChunk);
  // declared length fits but an event inside runs off the end
  Bytes inner = with_track(header(0, 1, 480), {0x00, 0x90, 0x3C});
  CHECK(code_of([&] { parse_smf(inner); }) == Errc::TruncatedChunk);
}

TEST_CASE("missing end of track is supplied") {
  auto m = parse_smf(with_track(header(0, 1, 480), {0x00, 0x90, 0x3C, 0x64, 0x10, 0x80, 0x3C, 0x00}));
  REQUIRE(m.tracks[0].size() == 3);
  CHECK(m.tracks[0].back() == TrackEvent{16, EndOfTrack{}});
}

TEST_CASE("unknown chunks are skipped") {
  Bytes f = header(0, 1, 480);
  f.insert(f.end(), {'X', 'Y', 'Z', 'W', 0, 0, 0, 2, 9, 9});
  f = with_track(f, {0x00, 0xFF, 0x2F, 0x00});
  CHECK(parse_smf(f).tracks.size() == 1);
}

TEST_CASE("fifo pairing for overlapping same-pitch notes") {
  MidiFile m;
  m.format = 0;
  m.tracks = {{{0, NoteOn{0, 60, 90}},
               {10, NoteOn{0, 60, 70}},
               {20, NoteOff{0, 60, 0}},
               {30, NoteOff{0, 60, 0}},
               {30, EndOfTrack{}}}};
  auto notes = extract_notes(m);
  REQUIRE(notes.size() == 2);
  CHECK(notes[0] == NoteEvent{60, 0, 20, 90, 0});
  CHECK(notes[1] == NoteEvent{60, 10, 20, 70, 0});
}

TEST_CASE("orphan offs, zero-length and unterminated notes") {
  MidiFile m;
  m.tracks = {{{0, NoteOff{0, 50, 0}},
               {5, NoteOn{0, 62, 80}},
               {5, NoteOff{0, 62, 0}},
               {6, NoteOn{3, 70, 40}},
               {90, EndOfTrack{}}}};
  auto notes = extract_notes(m);
  REQUIRE(notes.size() == 2);
  CHECK(notes[0] == NoteEvent{62, 5, 1, 80, 0});
  CHECK(notes[1] == NoteEvent{70, 6, 84, 40, 3});
}

TEST_CASE("property: pairing matches brute-force oracle") {
  std::mt19937_64 g(11);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<oracle::RawEvent> raw;
    Track track;
    Tick tick = 0;
    const int n = static_cast<int>(g() % 40);
    for (int i = 0; i < n; ++i) {
      tick += g() % 4;
      oracle::RawEvent e{tick, g() % 2 == 0, static_cast<int>(g() % 2), 60 + static_cast<int>(g() % 3), 1 + static_cast<int>(g() % 127)};
      raw.push_back(e);
      auto ch = static_cast<std::uint8_t>(e.channel), p = static_cast<std::uint8_t>(e.pitch), v = static_cast<std::uint8_t>(e.velocity);
      track.push_back({tick, e.on ? Payload{NoteOn{ch, p, v}} : Payload{NoteOff{ch, p, 0}}});
    }
    const Tick end = tick + 1 + g() % 5;
    track.push_back({end, EndOfTrack{}});
    MidiFile m;
    m.tracks = {track};

    auto expect = oracle::fifo_pairs(raw, end);
    std::vector<NoteEvent> want;
    for (const auto& p : expect)
      want.push_back({static_cast<std::uint8_t>(p.pitch), p.on, p.off > p.on ? p.off - p.on : 1, static_cast<std::uint8_t>(p.velocity),
                      static_cast<std::uint8_t>(p.channel)});
    std::sort(want.begin(), want.end(), [](const NoteEvent& a, const NoteEvent& b) {
      return std::tie(a.onset_tick, a.pitch, a.channel, a.duration_tick) < std::tie(b.onset_tick, b.pitch, b.channel, b.duration_tick);
    });
    auto got = extract_notes(m);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      // velocity is not part of the sort key, so compare as multiset per position key
      CHECK(got[i].onset_tick == want[i].onset_tick);
      CHECK(got[i].pitch == want[i].pitch);
      CHECK(got[i].channel == want[i].channel);
      CHECK(got[i].duration_tick == want[i].duration_tick);
    }
  }
}

TEST_CASE("tempo map conversion") {
  std::vector<TempoChange> map{{480, 250000}};
  CHECK(tick_to_seconds(960, map, 480) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(tick_to_seconds(480, map, 480) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(tick_to_seconds(480, {}, 480) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(tick_to_seconds(0, map, 480) == 0.0);
}

TEST_CASE("property: tick_to_seconds is monotone and additive across segments") {
  std::mt19937_64 g(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TempoChange> map;
    Tick t = 0;
    for (int i = 0; i < 5; ++i) {
      t += g() % 2000;
      map.push_back({t, static_cast<std::uint32_t>(100000 + g() % 900000)});
    }
    double prev = -1.0;
    for (Tick k = 0; k < t + 2000; k += 1 + g() % 300) {
      double s = tick_to_seconds(k, map, 480);
      CHECK(s >= prev);
      prev = s;
    }
  }
}

TEST_CASE("validate rejects bad fields") {
  MidiFile m;
  m.tracks = {{{0, NoteOn{16, 60, 100}}, {0, EndOfTrack{}}}};
  CHECK(code_of([&] { serialize_smf(m); }) == Errc::InvariantViolation);
  m.tracks = {{{0, NoteOn{0, 128, 100}}, {0, EndOfTrack{}}}};
  CHECK(code_of([&] { validate(m); }) == Errc::InvariantViolation);
  m.tracks = {{{10, NoteOn{0, 60, 100}}, {5, EndOfTrack{}}}};
  CHECK(code_of([&] { validate(m); }) == Errc::InvariantViolation);
  m.tracks = {{{0, EndOfTrack{}}, {5, NoteOn{0, 60, 1}}}};
  CHECK(code_of([&] { validate(m); }) == Errc::InvariantViolation);
  m.tracks = {{{0, SetTempo{0}}}};
  CHECK(code_of([&] { validate(m); }) == Errc::InvariantViolation);
  m.tracks = {{{Tick{kMaxVlq} + 1, EndOfTrack{}}}};
  CHECK(code_of([&] { validate(m); }) == Errc::InvariantViolation);
}

TEST_CASE("serializer appends end of track") {
  MidiFile m;
  m.format = 0;
  m.tracks = {{{7, NoteOn{0, 60, 100}}}};
  auto back = parse_smf(serialize_smf(m));
  REQUIRE(back.tracks[0].size() == 2);
  CHECK(back.tracks[0][1] == TrackEvent{7, EndOfTrack{}});
}

TEST_CASE("property: random files round-trip") {
  std::mt19937_64 g(2024);
  for (int i = 0; i < 300; ++i) {
    MidiFile f = oracle::random_file(g);
    Bytes b = serialize_smf(f);
    MidiFile back = parse_smf(b);
    REQUIRE(back == f);
    CHECK(serialize_smf(back) == b);
  }
}

TEST_CASE("corpus files parse and re-serialize losslessly") {
  auto files = train::list_midi_files(MF_CORPUS_DIR);
  REQUIRE(files.size() >= 20);
  for (const auto& path : files) {
    CAPTURE(path);
    MidiFile m = parse_smf(read_file(path));
    Bytes b = serialize_smf(m);
    CHECK(parse_smf(b) == m);
    CHECK(extract_notes(parse_smf(b)) == extract_notes(m));
  }
}
