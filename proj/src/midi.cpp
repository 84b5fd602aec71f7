// Standard MIDI File parsing/writing and eighth-note quantization.
//
// Parsing covers SMF formats 0 and 1: big-endian chunk headers,
// variable-length delta times, running status, note-on velocity 0 as
// note-off. Meta and sysex events are consumed and dropped. Writing
// always emits a single-track format-0 file.

#include "intervalic/midi.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "intervalic/common.hpp"

namespace intervalic::midi {

namespace {

class ByteReader {
public:
  ByteReader(std::span<const uint8_t> bytes, size_t begin, size_t end)
      : bytes_(bytes), pos_(begin), end_(end) {}

  size_t pos() const { return pos_; }
  size_t remaining() const { return end_ - pos_; }
  bool done() const { return pos_ >= end_; }

  uint8_t u8(const char* what) {
    if (pos_ >= end_) raise(ErrorCode::truncated_track, std::string("unexpected end of data reading ") + what);
    return bytes_[pos_++];
  }

  uint8_t peek() const { return bytes_[pos_]; }

  uint32_t u16be(const char* what) {
    uint32_t hi = u8(what);
    return (hi << 8) | u8(what);
  }

  uint32_t u32be(const char* what) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | u8(what);
    return v;
  }

  // Variable-length quantity, at most 4 bytes per the SMF spec.
  uint32_t vlq(const char* what) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      uint8_t b = u8(what);
      v = (v << 7) | (b & 0x7Fu);
      if ((b & 0x80u) == 0) return v;
    }
    raise(ErrorCode::truncated_track, std::string("overlong variable-length quantity in ") + what);
  }

  void skip(size_t n, const char* what) {
    if (remaining() < n) raise(ErrorCode::truncated_track, std::string("unexpected end of data skipping ") + what);
    pos_ += n;
  }

private:
  std::span<const uint8_t> bytes_;
  size_t pos_;
  size_t end_;
};

struct OpenNote {
  int64_t onset;
};

// Parses one MTrk payload, appending completed notes to out.
void parse_track(ByteReader& r, int track_index, std::vector<NoteEvent>* out) {
  int64_t tick = 0;
  int running_status = -1;
  // FIFO per (channel, pitch): overlapping re-triggers close oldest first.
  std::map<std::pair<int, int>, std::vector<OpenNote>> open;

  auto close_note = [&](int channel, int pitch, int64_t off_tick) {
    auto it = open.find({channel, pitch});
    if (it == open.end() || it->second.empty()) return;  // stray note-off, ignored
    OpenNote note = it->second.front();
    it->second.erase(it->second.begin());
    int64_t dur = off_tick - note.onset;
    if (dur < 1) dur = 1;  // zero-length notes still get one tick
    out->push_back(NoteEvent{pitch, note.onset, dur, track_index});
  };

  while (!r.done()) {
    tick += r.vlq("delta time");
    uint8_t first = r.u8("event status");
    int status;
    int data0;
    if (first & 0x80u) {
      status = first;
      if (status == 0xFF) {  // meta event
        uint8_t type = r.u8("meta type");
        uint32_t len = r.vlq("meta length");
        r.skip(len, "meta data");
        running_status = -1;
        if (type == 0x2F) break;  // end of track
        continue;
      }
      if (status == 0xF0 || status == 0xF7) {  // sysex
        uint32_t len = r.vlq("sysex length");
        r.skip(len, "sysex data");
        running_status = -1;
        continue;
      }
      if (status >= 0xF1) {  // system common / realtime: no payload we track
        running_status = -1;
        continue;
      }
      running_status = status;
      data0 = r.u8("event data");
    } else {
      if (running_status < 0)
        raise(ErrorCode::truncated_track, "data byte with no running status");
      status = running_status;
      data0 = first;
    }

    int kind = status & 0xF0;
    int channel = status & 0x0F;
    switch (kind) {
      case 0x90: {  // note on (velocity 0 means note off)
        int velocity = r.u8("note-on velocity");
        int pitch = data0 & 0x7F;
        if (velocity == 0) {
          close_note(channel, pitch, tick);
        } else {
          open[{channel, pitch}].push_back(OpenNote{tick});
        }
        break;
      }
      case 0x80: {  // note off
        r.u8("note-off velocity");
        close_note(channel, data0 & 0x7F, tick);
        break;
      }
      case 0xA0:  // polyphonic aftertouch
      case 0xB0:  // control change
      case 0xE0:  // pitch bend
        r.u8("event data");
        break;
      case 0xC0:  // program change
      case 0xD0:  // channel aftertouch
        break;    // single data byte, already consumed
      default:
        raise(ErrorCode::truncated_track, "unrecognized status byte " + std::to_string(status));
    }
  }

  for (const auto& [key, notes] : open) {
    if (!notes.empty()) {
      raise(ErrorCode::unmatched_note_on,
            "pitch " + std::to_string(key.second) + " at tick " + std::to_string(notes.front().onset) +
                " in track " + std::to_string(track_index) + " has no note-off");
    }
  }
}

void sort_events(std::vector<NoteEvent>* events) {
  std::stable_sort(events->begin(), events->end(), [](const NoteEvent& a, const NoteEvent& b) {
    return std::tie(a.onset, a.track, a.pitch) < std::tie(b.onset, b.track, b.pitch);
  });
}

void append_u16be(std::vector<uint8_t>* out, uint32_t v) {
  out->push_back((v >> 8) & 0xFF);
  out->push_back(v & 0xFF);
}

void append_u32be(std::vector<uint8_t>* out, uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out->push_back((v >> shift) & 0xFF);
}

void append_vlq(std::vector<uint8_t>* out, int64_t v) {
  uint8_t buf[4];
  int n = 0;
  uint32_t u = static_cast<uint32_t>(v);
  do {
    buf[n++] = u & 0x7Fu;
    u >>= 7;
  } while (u != 0 && n < 4);
  for (int i = n - 1; i >= 0; --i) out->push_back(buf[i] | (i > 0 ? 0x80u : 0u));
}

}  // namespace

MidiPiece parse_midi(std::span<const uint8_t> bytes) {
  ByteReader header(bytes, 0, bytes.size());
  if (header.remaining() < 14) raise(ErrorCode::malformed_header, "file shorter than an MThd chunk");
  if (!(header.u8("chunk id") == 'M' && header.u8("chunk id") == 'T' &&
        header.u8("chunk id") == 'h' && header.u8("chunk id") == 'd'))
    raise(ErrorCode::malformed_header, "missing MThd chunk id");
  uint32_t header_len = header.u32be("header length");
  if (header_len < 6) raise(ErrorCode::malformed_header, "MThd length " + std::to_string(header_len) + " < 6");
  uint32_t format = header.u16be("format");
  uint32_t declared_tracks = header.u16be("track count");
  uint32_t division = header.u16be("division");
  if (format > 1) raise(ErrorCode::unsupported_format, "SMF format " + std::to_string(format));
  if (division & 0x8000u) raise(ErrorCode::unsupported_format, "SMPTE time division");
  if (division == 0) raise(ErrorCode::malformed_header, "zero ticks per quarter note");
  if (header.remaining() < header_len - 6) raise(ErrorCode::malformed_header, "MThd shorter than declared");

  MidiPiece piece;
  piece.format = static_cast<int>(format);
  piece.ticks_per_quarter = static_cast<int>(division);

  size_t pos = 8 + header_len;
  int track_index = 0;
  while (pos < bytes.size() && track_index < static_cast<int>(declared_tracks)) {
    ByteReader chunk(bytes, pos, bytes.size());
    if (chunk.remaining() < 8) raise(ErrorCode::truncated_track, "trailing bytes too short for a chunk header");
    char id[4];
    for (char& c : id) c = static_cast<char>(chunk.u8("chunk id"));
    uint32_t len = chunk.u32be("chunk length");
    if (chunk.remaining() < len) raise(ErrorCode::truncated_track, "chunk length runs past end of file");
    if (std::string_view(id, 4) == "MTrk") {
      ByteReader track(bytes, chunk.pos(), chunk.pos() + len);
      parse_track(track, track_index, &piece.events);
      ++track_index;
    }
    // non-MTrk chunks are alien chunks, skipped per the SMF spec
    pos = chunk.pos() + len;
  }
  if (track_index < static_cast<int>(declared_tracks))
    raise(ErrorCode::truncated_track, "file ends before the declared track count");

  sort_events(&piece.events);
  return piece;
}

std::vector<uint8_t> write_midi(const MidiPiece& piece) {
  // Flatten notes to on/off boundary events. Offs sort before ons at the
  // same tick so back-to-back repeats of a pitch stay unambiguous.
  struct Boundary {
    int64_t tick;
    int kind;  // 0 = off, 1 = on
    int pitch;
  };
  std::vector<Boundary> boundaries;
  boundaries.reserve(piece.events.size() * 2);
  for (const NoteEvent& e : piece.events) {
    boundaries.push_back({e.onset, 1, e.pitch});
    boundaries.push_back({e.onset + e.duration, 0, e.pitch});
  }
  std::sort(boundaries.begin(), boundaries.end(), [](const Boundary& a, const Boundary& b) {
    return std::tie(a.tick, a.kind, a.pitch) < std::tie(b.tick, b.kind, b.pitch);
  });

  std::vector<uint8_t> track;
  int64_t last_tick = 0;
  for (const Boundary& b : boundaries) {
    append_vlq(&track, b.tick - last_tick);
    last_tick = b.tick;
    track.push_back(b.kind ? 0x90 : 0x80);
    track.push_back(static_cast<uint8_t>(b.pitch & 0x7F));
    track.push_back(b.kind ? 80 : 64);  // fixed velocity, dynamics are out of scope
  }
  append_vlq(&track, 0);
  track.push_back(0xFF);
  track.push_back(0x2F);
  track.push_back(0x00);

  std::vector<uint8_t> out;
  out.reserve(track.size() + 22);
  const char* mthd = "MThd";
  out.insert(out.end(), mthd, mthd + 4);
  append_u32be(&out, 6);
  append_u16be(&out, 0);  // format 0
  append_u16be(&out, 1);  // one track
  append_u16be(&out, static_cast<uint32_t>(piece.ticks_per_quarter));
  const char* mtrk = "MTrk";
  out.insert(out.end(), mtrk, mtrk + 4);
  append_u32be(&out, static_cast<uint32_t>(track.size()));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

int64_t estimate_offset(const MidiPiece& piece, int64_t quantum_ticks) {
  if (piece.events.empty()) raise(ErrorCode::empty_piece, "cannot estimate an offset with no events");
  std::map<int64_t, int64_t> histogram;
  for (const NoteEvent& e : piece.events) ++histogram[e.onset % quantum_ticks];
  int64_t best_offset = 0;
  int64_t best_count = -1;
  for (const auto& [offset, count] : histogram) {
    if (count > best_count) {  // map iteration is ascending, so ties keep the smaller offset
      best_offset = offset;
      best_count = count;
    }
  }
  return best_offset;
}

PitchGrid quantize(const MidiPiece& piece, int64_t offset) {
  // Work in ticks scaled by 2 so q = ticks_per_quarter / 2 stays integral
  // for odd divisions. Q below is one eighth note in scaled ticks.
  const int64_t Q = piece.ticks_per_quarter;
  PitchGrid grid;
  int64_t last_step = -1;
  for (const NoteEvent& e : piece.events) {
    const int64_t a = 2 * (e.onset - offset);
    const int64_t b = a + 2 * e.duration;
    if (b <= 0) continue;  // entirely before the grid origin
    int64_t t = a >= 0 ? a / Q : -((-a + Q - 1) / Q);
    if (t < 0) t = 0;
    for (; t * Q < b; ++t) {
      const int64_t overlap = std::min(b, (t + 1) * Q) - std::max(a, t * Q);
      if (2 * overlap >= Q) {
        if (t >= static_cast<int64_t>(grid.steps.size())) grid.steps.resize(t + 1);
        grid.steps[t].insert(e.pitch);
        last_step = std::max(last_step, t);
      }
    }
  }
  grid.steps.resize(last_step + 1);
  return grid;
}

PitchGrid strip_silence(const PitchGrid& grid) {
  PitchGrid out;
  out.steps.reserve(grid.steps.size());
  for (const PitchSet& step : grid.steps) {
    if (!step.empty()) out.steps.push_back(step);
  }
  return out;
}

MidiPiece grid_to_piece(const PitchGrid& grid, int ticks_per_quarter) {
  const int64_t q = ticks_per_quarter / 2;
  MidiPiece piece;
  piece.ticks_per_quarter = ticks_per_quarter;
  piece.format = 0;
  std::map<int, int64_t> active;  // pitch -> step where the current run began
  for (int64_t t = 0; t <= static_cast<int64_t>(grid.steps.size()); ++t) {
    const bool past_end = t == static_cast<int64_t>(grid.steps.size());
    for (auto it = active.begin(); it != active.end();) {
      if (past_end || !grid.steps[t].contains(it->first)) {
        piece.events.push_back(NoteEvent{it->first, it->second * q, (t - it->second) * q, 0});
        it = active.erase(it);
      } else {
        ++it;
      }
    }
    if (!past_end) {
      for (int pitch : grid.steps[t]) {
        if (!active.contains(pitch)) active[pitch] = t;
      }
    }
  }
  sort_events(&piece.events);
  return piece;
}

}  // namespace intervalic::midi
