#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "intervalic/codec.hpp"
#include "intervalic/dataset.hpp"
#include "intervalic/nn.hpp"

namespace intervalic::engine {

struct TrainConfig {
  int64_t epochs = 4000;
  double target_loss = 0.001;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  uint64_t seed = 0;
  int64_t log_every = 100;  // 0 disables progress lines
};

struct Checkpoint {
  nn::ModelParams params;
  codec::CodecConfig codec;
  dataset::DatasetConfig data;
  double final_loss = 0.0;
  int64_t epochs_run = 0;
  uint64_t seed = 0;
};

struct LossPoint {
  int64_t epoch = 0;
  double loss = 0.0;

  bool operator==(const LossPoint&) const = default;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossPoint> curve;  // curve[e] is the full-batch loss after e updates
};

/// Full-batch training: every epoch runs forward/backward over all examples
/// and applies one Adam update. Stops once the mean loss reaches
/// target_loss, so a converged starting point exits after zero updates, or
/// once the epoch cap is hit. Single-threaded and deterministic for fixed
/// seed, data, and config. Starts from init when given, otherwise from a
/// fresh seeded initialization.
TrainResult train(const dataset::Dataset& data, const TrainConfig& config,
                  const nn::ModelParams* init = nullptr, std::ostream* log = nullptr);

struct GenerationConfig {
  int64_t steps = 0;
  int opening_pitch = 72;
  double chord_threshold = 0.5;
  int chord_max_active = 3;
};

/// Melody: one-hot at the argmax, ties to the lowest index. Chord: the up
/// to chord_max_active highest-probability slots that each exceed the
/// threshold; none qualifying leaves the chord empty.
codec::TimestepVector quantize_output(const std::vector<double>& melody_probs,
                                      const std::vector<double>& chord_probs,
                                      const GenerationConfig& config);

struct GenerationResult {
  codec::EncodedPiece piece;  // prompt steps followed by generated steps
  int64_t prompt_steps = 0;   // boundary between copied and composed material
};

/// Autoregressive loop: feed the trailing window, predict one timestep,
/// quantize, append, slide. Deterministic given checkpoint and prompt.
GenerationResult generate(const Checkpoint& cp, const std::vector<codec::TimestepVector>& prompt,
                          const GenerationConfig& config);

/// Decodes an encoded piece from the opening pitch and writes it as SMF
/// bytes, one eighth note per timestep with consecutive repeats merged.
std::vector<uint8_t> render(const codec::EncodedPiece& enc, int opening_pitch);

/// Self-describing binary format: one JSON metadata line (version,
/// architecture with gate order, codec and dataset configs, training
/// metadata, tensor manifest), the tensor payload as little-endian doubles
/// in manifest order, and a trailing FNV-1a 64 checksum. Writes are
/// write-temp-rename atomic; reload is bit-exact.
void save_checkpoint(const Checkpoint& cp, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void write_loss_csv(const std::vector<LossPoint>& curve, const std::string& path);

}  // namespace intervalic::engine
