#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "intervalic/midi.hpp"

namespace intervalic::codec {

struct CodecConfig {
  int max_space = 64;    // chord vector length: largest soprano-to-bass distance in the corpus
  int melody_span = 11;  // half-steps of melodic motion in each direction

  int melody_size() const { return 2 * melody_span + 1; }
  int feature_size() const { return melody_size() + max_space; }

  bool operator==(const CodecConfig&) const = default;
};

using Bits = std::vector<uint8_t>;

/// One encoded timestep. The melody half is a one-hot over signed melodic
/// intervals: slot k encodes (k - melody_span) half-steps, so slot 0 is the
/// largest downward leap, the center slot is "no motion" and the last slot
/// is the largest upward leap. The chord half is a multi-hot where slot
/// d - 1 means a note sounds d half-steps below the soprano.
struct TimestepVector {
  Bits melody;
  Bits chord;

  Bits flatten() const;  // melody slots first, then chord slots
  bool operator==(const TimestepVector&) const = default;
};

TimestepVector unflatten(const Bits& flat, const CodecConfig& config);

struct EncodedPiece {
  CodecConfig config;
  std::vector<TimestepVector> steps;

  bool operator==(const EncodedPiece&) const = default;
};

/// Highest pitch of a step.
int soprano_of(const midi::PitchSet& step);

/// Brings a melodic interval within the octave: identity for |i| <= 11,
/// otherwise sign(i) * (|i| mod 12). Exact octave multiples fold to 0.
int fold_interval(int interval);

/// Consecutive soprano motions, folded. Output length is input length - 1.
std::vector<int> melody_intervals(const std::vector<int>& sopranos);

Bits melody_onehot(int interval, const CodecConfig& config = {});

/// Inverse of melody_onehot: the signed interval a one-hot encodes.
int melody_interval_of(const Bits& melody, const CodecConfig& config = {});

/// Intervals below the soprano as a multi-hot. Pitches equal to the soprano
/// are dropped (there is no slot for a unison doubling).
Bits chord_multihot(const midi::PitchSet& step, int soprano, const CodecConfig& config);

/// Encodes a silence-stripped grid. The first grid step has no previous
/// soprano to move from and is skipped, so the output has one step fewer
/// than the grid.
EncodedPiece encode_piece(const midi::PitchGrid& grid, const CodecConfig& config);

struct DecodeWarning {
  int step = 0;
  int from_pitch = 0;  // pitch before octave folding
  int to_pitch = 0;    // pitch actually emitted
};

struct DecodeResult {
  midi::PitchGrid grid;
  std::vector<DecodeWarning> warnings;
};

/// Rebuilds pitches from an opening soprano note: each melody interval is
/// added to the previous soprano, and each chord slot d hangs a pitch d
/// half-steps below it. Pitches that leave 0-127 are folded back by whole
/// octaves and reported as warnings rather than errors.
DecodeResult decode_piece(const EncodedPiece& enc, int opening_pitch);

/// Largest (soprano - lowest pitch) over all steps with at least two
/// distinct pitches; 1 when the corpus is entirely monophonic.
int scan_max_space(const std::vector<midi::PitchGrid>& corpus);

// JSON-lines record per piece:
//   {"format_version":1,"config":{"max_space":..,"melody_span":..},"steps":[[0,1,..],..]}
// Each step is the flattened 0/1 vector, melody slots first.
// A non-negative prompt_steps adds a "prompt_steps" field marking the
// boundary between copied and generated material; readers may ignore it.
void write_piece_record(std::ostream& out, const EncodedPiece& piece, int64_t prompt_steps = -1);
EncodedPiece parse_piece_record(const std::string& line);
std::vector<EncodedPiece> read_piece_records(std::istream& in);

}  // namespace intervalic::codec
