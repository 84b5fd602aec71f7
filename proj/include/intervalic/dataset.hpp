#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "intervalic/codec.hpp"

namespace intervalic::dataset {

struct DatasetConfig {
  int window = 40;       // timesteps per training input
  int stride = 1;        // window start spacing
  int train_pieces = 350;

  bool operator==(const DatasetConfig&) const = default;
};

/// One supervised example: `window` consecutive encoded timesteps as input
/// and the timestep immediately after them as target.
struct TrainingExample {
  codec::Bits input;   // window * feature_size values, row-major
  codec::Bits target;  // feature_size values

  bool operator==(const TrainingExample&) const = default;
};

struct DatasetStats {
  int64_t total_timesteps = 0;           // grid steps summed over the corpus
  int64_t piece_count = 0;
  int64_t soprano_motions = 0;           // soprano-to-soprano steps, before folding
  int64_t motions_octave_or_larger = 0;  // |motion| >= 12 before folding
  int observed_max_space = 0;            // 0 only for an empty corpus
  int64_t example_count = 0;             // windows the corpus yields under the config

  bool operator==(const DatasetStats&) const = default;
};

struct CorpusSplit {
  std::vector<midi::PitchGrid> training;
  std::vector<midi::PitchGrid> prompts;
};

/// First train_pieces pieces in distribution order become the training set,
/// the remainder the prompt set.
CorpusSplit split_corpus(std::vector<midi::PitchGrid> pieces, const DatasetConfig& config);

/// Slices an encoded piece into examples at starts 0, stride, 2*stride, ...
/// while a full window plus its target step fit. Pieces shorter than
/// window + 1 yield nothing.
std::vector<TrainingExample> window_examples(const codec::EncodedPiece& enc, const DatasetConfig& config);

/// Corpus statistics over silence-stripped grids.
DatasetStats compute_stats(const std::vector<midi::PitchGrid>& grids, const DatasetConfig& config);

struct Dataset {
  codec::CodecConfig codec;
  DatasetConfig config;
  DatasetStats stats;
  std::vector<TrainingExample> examples;

  bool operator==(const Dataset&) const = default;
};

// Single-file container: a JSON header line carrying version, configs,
// stats and a payload checksum, then one JSON line per example.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace intervalic::dataset
