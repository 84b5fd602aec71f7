#include "intervalic/common.hpp"

namespace intervalic {

const char* error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::malformed_header: return "MalformedHeader";
    case ErrorCode::unsupported_format: return "UnsupportedFormat";
    case ErrorCode::truncated_track: return "TruncatedTrack";
    case ErrorCode::unmatched_note_on: return "UnmatchedNoteOn";
    case ErrorCode::empty_piece: return "EmptyPiece";
    case ErrorCode::empty_step: return "EmptyStep";
    case ErrorCode::empty_grid: return "EmptyGrid";
    case ErrorCode::interval_out_of_range: return "IntervalOutOfRange";
    case ErrorCode::interval_exceeds_max_space: return "IntervalExceedsMaxSpace";
    case ErrorCode::corpus_too_small: return "CorpusTooSmall";
    case ErrorCode::shape_mismatch: return "ShapeMismatch";
    case ErrorCode::stale_cache: return "StaleCache";
    case ErrorCode::divergence_detected: return "DivergenceDetected";
    case ErrorCode::prompt_length_mismatch: return "PromptLengthMismatch";
    case ErrorCode::architecture_mismatch: return "ArchitectureMismatch";
    case ErrorCode::io_failure: return "IoFailure";
    case ErrorCode::version_mismatch: return "VersionMismatch";
    case ErrorCode::checksum_mismatch: return "ChecksumMismatch";
  }
  return "Error";
}

}  // namespace intervalic
