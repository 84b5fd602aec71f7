#include "intervalic/codec.hpp"

#include <algorithm>
#include <cstdlib>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "intervalic/common.hpp"

namespace intervalic::codec {

using nlohmann::json;

Bits TimestepVector::flatten() const {
  Bits flat;
  flat.reserve(melody.size() + chord.size());
  flat.insert(flat.end(), melody.begin(), melody.end());
  flat.insert(flat.end(), chord.begin(), chord.end());
  return flat;
}

TimestepVector unflatten(const Bits& flat, const CodecConfig& config) {
  if (static_cast<int>(flat.size()) != config.feature_size())
    raise(ErrorCode::shape_mismatch,
          "flat vector has " + std::to_string(flat.size()) + " slots, expected " +
              std::to_string(config.feature_size()));
  TimestepVector step;
  step.melody.assign(flat.begin(), flat.begin() + config.melody_size());
  step.chord.assign(flat.begin() + config.melody_size(), flat.end());
  return step;
}

int soprano_of(const midi::PitchSet& step) {
  if (step.empty()) raise(ErrorCode::empty_step, "no soprano in an empty step");
  return *step.rbegin();
}

int fold_interval(int interval) {
  if (std::abs(interval) <= 11) return interval;
  int folded = std::abs(interval) % 12;
  return interval < 0 ? -folded : folded;
}

std::vector<int> melody_intervals(const std::vector<int>& sopranos) {
  std::vector<int> intervals;
  if (sopranos.empty()) return intervals;
  intervals.reserve(sopranos.size() - 1);
  for (size_t t = 1; t < sopranos.size(); ++t)
    intervals.push_back(fold_interval(sopranos[t] - sopranos[t - 1]));
  return intervals;
}

Bits melody_onehot(int interval, const CodecConfig& config) {
  if (std::abs(interval) > config.melody_span)
    raise(ErrorCode::interval_out_of_range,
          "interval " + std::to_string(interval) + " exceeds +/-" + std::to_string(config.melody_span));
  Bits slots(config.melody_size(), 0);
  slots[interval + config.melody_span] = 1;
  return slots;
}

int melody_interval_of(const Bits& melody, const CodecConfig& config) {
  if (static_cast<int>(melody.size()) != config.melody_size())
    raise(ErrorCode::shape_mismatch, "melody vector has wrong length");
  for (int k = 0; k < static_cast<int>(melody.size()); ++k) {
    if (melody[k]) return k - config.melody_span;
  }
  raise(ErrorCode::shape_mismatch, "melody vector has no active slot");
}

Bits chord_multihot(const midi::PitchSet& step, int soprano, const CodecConfig& config) {
  Bits slots(config.max_space, 0);
  for (int pitch : step) {
    if (pitch >= soprano) continue;  // the soprano (and its unison doublings) lives in the melody vector
    const int distance = soprano - pitch;
    if (distance > config.max_space)
      raise(ErrorCode::interval_exceeds_max_space,
            "note " + std::to_string(distance) + " half-steps below the soprano exceeds max_space " +
                std::to_string(config.max_space));
    slots[distance - 1] = 1;
  }
  return slots;
}

EncodedPiece encode_piece(const midi::PitchGrid& grid, const CodecConfig& config) {
  if (grid.steps.empty()) raise(ErrorCode::empty_grid, "cannot encode an empty grid");
  EncodedPiece piece;
  piece.config = config;
  piece.steps.reserve(grid.steps.size() - 1);
  int prev_soprano = soprano_of(grid.steps[0]);
  for (size_t t = 1; t < grid.steps.size(); ++t) {
    const int soprano = soprano_of(grid.steps[t]);
    TimestepVector step;
    step.melody = melody_onehot(fold_interval(soprano - prev_soprano), config);
    step.chord = chord_multihot(grid.steps[t], soprano, config);
    piece.steps.push_back(std::move(step));
    prev_soprano = soprano;
  }
  return piece;
}

namespace {

// Folds a pitch back into 0-127 by whole octaves, recording the repair.
int fold_into_range(int pitch, int step, std::vector<DecodeWarning>* warnings) {
  int folded = pitch;
  while (folded > 127) folded -= 12;
  while (folded < 0) folded += 12;
  if (folded != pitch) warnings->push_back(DecodeWarning{step, pitch, folded});
  return folded;
}

}  // namespace

DecodeResult decode_piece(const EncodedPiece& enc, int opening_pitch) {
  DecodeResult result;
  result.grid.steps.reserve(enc.steps.size() + 1);
  int soprano = fold_into_range(opening_pitch, 0, &result.warnings);
  result.grid.steps.push_back({soprano});
  for (size_t t = 0; t < enc.steps.size(); ++t) {
    const TimestepVector& step = enc.steps[t];
    // The running soprano itself is kept in range so the harmony below it
    // stays coherent after a fold.
    soprano = fold_into_range(soprano + melody_interval_of(step.melody, enc.config),
                              static_cast<int>(t) + 1, &result.warnings);
    midi::PitchSet pitches{soprano};
    for (int slot = 0; slot < static_cast<int>(step.chord.size()); ++slot) {
      if (step.chord[slot])
        pitches.insert(fold_into_range(soprano - (slot + 1), static_cast<int>(t) + 1, &result.warnings));
    }
    result.grid.steps.push_back(std::move(pitches));
  }
  return result;
}

int scan_max_space(const std::vector<midi::PitchGrid>& corpus) {
  int max_space = 1;
  for (const midi::PitchGrid& grid : corpus) {
    for (const midi::PitchSet& step : grid.steps) {
      if (step.size() < 2) continue;
      max_space = std::max(max_space, *step.rbegin() - *step.begin());
    }
  }
  return max_space;
}

void write_piece_record(std::ostream& out, const EncodedPiece& piece, int64_t prompt_steps) {
  json record;
  record["format_version"] = 1;
  record["config"] = {{"max_space", piece.config.max_space}, {"melody_span", piece.config.melody_span}};
  if (prompt_steps >= 0) record["prompt_steps"] = prompt_steps;
  json steps = json::array();
  for (const TimestepVector& step : piece.steps) steps.push_back(step.flatten());
  record["steps"] = std::move(steps);
  out << record.dump() << '\n';
}

EncodedPiece parse_piece_record(const std::string& line) {
  json record = json::parse(line, nullptr, false);
  if (record.is_discarded() || !record.contains("config") || !record.contains("steps"))
    raise(ErrorCode::io_failure, "malformed encoded-piece record");
  EncodedPiece piece;
  piece.config.max_space = record["config"].value("max_space", 64);
  piece.config.melody_span = record["config"].value("melody_span", 11);
  for (const json& flat : record["steps"]) {
    Bits bits;
    bits.reserve(flat.size());
    for (const json& v : flat) bits.push_back(v.get<int>() ? 1 : 0);
    piece.steps.push_back(unflatten(bits, piece.config));
  }
  return piece;
}

std::vector<EncodedPiece> read_piece_records(std::istream& in) {
  std::vector<EncodedPiece> pieces;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    pieces.push_back(parse_piece_record(line));
  }
  return pieces;
}

}  // namespace intervalic::codec
