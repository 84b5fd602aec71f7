#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <vector>

namespace intervalic::midi {

/// A single note extracted from (or destined for) a Standard MIDI File.
struct NoteEvent {
  int pitch = 0;         // MIDI pitch number, 0-127
  int64_t onset = 0;     // ticks, >= 0
  int64_t duration = 1;  // ticks, >= 1
  int track = 0;         // source track index

  bool operator==(const NoteEvent&) const = default;
  auto operator<=>(const NoteEvent&) const = default;
};

struct MidiPiece {
  int ticks_per_quarter = 480;
  int format = 0;                 // SMF format 0 or 1
  std::vector<NoteEvent> events;  // sorted by (onset, track, pitch)

  bool operator==(const MidiPiece&) const = default;
};

using PitchSet = std::set<int>;

/// A piece quantized onto an eighth-note grid: one set of sounding
/// pitches per step. Steps may be empty until strip_silence runs.
struct PitchGrid {
  std::vector<PitchSet> steps;

  bool operator==(const PitchGrid&) const = default;
};

MidiPiece parse_midi(std::span<const uint8_t> bytes);

/// Emits a format-0 single-track file. parse_midi(write_midi(p))
/// reproduces p exactly for pieces with all events on track 0 and no two
/// overlapping notes of equal pitch (the byte stream cannot say which off
/// closes which on; parsing resolves such ties first-in first-out).
std::vector<uint8_t> write_midi(const MidiPiece& piece);

/// Most frequent value of (onset mod quantum_ticks); ties go to the
/// smallest value. Used to undo a constant beat misalignment.
int64_t estimate_offset(const MidiPiece& piece, int64_t quantum_ticks);

/// Maps notes onto eighth-note steps of q = ticks_per_quarter / 2 ticks,
/// after subtracting offset from all onsets. A pitch lands in step t iff
/// the note overlaps [t*q, (t+1)*q) by at least q/2.
PitchGrid quantize(const MidiPiece& piece, int64_t offset);

/// Removes empty steps, preserving order. Idempotent.
PitchGrid strip_silence(const PitchGrid& grid);

/// Inverse of quantize for playback: every pitch in step t becomes a note
/// one eighth note long; runs of the same pitch across consecutive steps
/// merge into one longer note.
MidiPiece grid_to_piece(const PitchGrid& grid, int ticks_per_quarter = 480);

}  // namespace intervalic::midi
