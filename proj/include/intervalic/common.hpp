#pragma once

#include <stdexcept>
#include <string>

namespace intervalic {

enum class ErrorCode {
  // midi parsing
  malformed_header,
  unsupported_format,
  truncated_track,
  unmatched_note_on,
  // codec / dataset input
  empty_piece,
  empty_step,
  empty_grid,
  interval_out_of_range,
  interval_exceeds_max_space,
  corpus_too_small,
  // numerics
  shape_mismatch,
  stale_cache,
  divergence_detected,
  // generation
  prompt_length_mismatch,
  architecture_mismatch,
  // persistence
  io_failure,
  version_mismatch,
  checksum_mismatch,
};

const char* error_name(ErrorCode code);

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace intervalic
