#include "intervalic/dataset.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "intervalic/common.hpp"

namespace intervalic::dataset {

using nlohmann::json;

CorpusSplit split_corpus(std::vector<midi::PitchGrid> pieces, const DatasetConfig& config) {
  if (static_cast<int>(pieces.size()) < config.train_pieces)
    raise(ErrorCode::corpus_too_small,
          "corpus has " + std::to_string(pieces.size()) + " pieces, need " +
              std::to_string(config.train_pieces) + " for training");
  CorpusSplit split;
  split.training.assign(std::make_move_iterator(pieces.begin()),
                        std::make_move_iterator(pieces.begin() + config.train_pieces));
  split.prompts.assign(std::make_move_iterator(pieces.begin() + config.train_pieces),
                       std::make_move_iterator(pieces.end()));
  return split;
}

std::vector<TrainingExample> window_examples(const codec::EncodedPiece& enc, const DatasetConfig& config) {
  std::vector<TrainingExample> examples;
  const int length = static_cast<int>(enc.steps.size());
  const int feature = enc.config.feature_size();
  for (int start = 0; start + config.window + 1 <= length; start += config.stride) {
    TrainingExample example;
    example.input.reserve(static_cast<size_t>(config.window) * feature);
    for (int t = start; t < start + config.window; ++t) {
      codec::Bits flat = enc.steps[t].flatten();
      example.input.insert(example.input.end(), flat.begin(), flat.end());
    }
    example.target = enc.steps[start + config.window].flatten();
    examples.push_back(std::move(example));
  }
  return examples;
}

DatasetStats compute_stats(const std::vector<midi::PitchGrid>& grids, const DatasetConfig& config) {
  DatasetStats stats;
  if (grids.empty()) return stats;
  stats.piece_count = static_cast<int64_t>(grids.size());
  stats.observed_max_space = codec::scan_max_space(grids);
  for (const midi::PitchGrid& grid : grids) {
    stats.total_timesteps += static_cast<int64_t>(grid.steps.size());
    int prev_soprano = -1;
    for (const midi::PitchSet& step : grid.steps) {
      const int soprano = codec::soprano_of(step);
      if (prev_soprano >= 0) {
        ++stats.soprano_motions;
        if (std::abs(soprano - prev_soprano) >= 12) ++stats.motions_octave_or_larger;
      }
      prev_soprano = soprano;
    }
    // encoding drops the first step, so window arithmetic runs on length - 1
    const int encoded_length = static_cast<int>(grid.steps.size()) - 1;
    if (encoded_length >= config.window + 1)
      stats.example_count += (encoded_length - config.window - 1) / config.stride + 1;
  }
  return stats;
}

namespace {

// FNV-1a 64-bit, used as the dataset payload checksum.
uint64_t fnv1a64(const std::string& bytes) {
  uint64_t hash = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  return hash;
}

std::string to_hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json stats_to_json(const DatasetStats& stats) {
  return {{"total_timesteps", stats.total_timesteps},
          {"piece_count", stats.piece_count},
          {"soprano_motions", stats.soprano_motions},
          {"motions_octave_or_larger", stats.motions_octave_or_larger},
          {"observed_max_space", stats.observed_max_space},
          {"example_count", stats.example_count}};
}

DatasetStats stats_from_json(const json& j) {
  DatasetStats stats;
  stats.total_timesteps = j.value("total_timesteps", int64_t{0});
  stats.piece_count = j.value("piece_count", int64_t{0});
  stats.soprano_motions = j.value("soprano_motions", int64_t{0});
  stats.motions_octave_or_larger = j.value("motions_octave_or_larger", int64_t{0});
  stats.observed_max_space = j.value("observed_max_space", 0);
  stats.example_count = j.value("example_count", int64_t{0});
  return stats;
}

constexpr int kDatasetFormatVersion = 1;

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& path) {
  std::string payload;
  {
    std::ostringstream lines;
    for (const TrainingExample& example : dataset.examples) {
      json record;
      json rows = json::array();
      const int feature = dataset.codec.feature_size();
      for (size_t offset = 0; offset < example.input.size(); offset += feature)
        rows.push_back(codec::Bits(example.input.begin() + offset, example.input.begin() + offset + feature));
      record["input"] = std::move(rows);
      record["target"] = example.target;
      lines << record.dump() << '\n';
    }
    payload = lines.str();
  }

  json header;
  header["format_version"] = kDatasetFormatVersion;
  header["codec"] = {{"max_space", dataset.codec.max_space}, {"melody_span", dataset.codec.melody_span}};
  header["dataset"] = {{"window", dataset.config.window},
                       {"stride", dataset.config.stride},
                       {"train_pieces", dataset.config.train_pieces}};
  header["stats"] = stats_to_json(dataset.stats);
  header["example_count"] = dataset.examples.size();
  header["payload_fnv1a64"] = to_hex(fnv1a64(payload));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::io_failure, "cannot open " + tmp + " for writing");
    out << header.dump() << '\n' << payload;
    if (!out.flush()) raise(ErrorCode::io_failure, "write to " + tmp + " failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    raise(ErrorCode::io_failure, "cannot move " + tmp + " into place");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::io_failure, "cannot open " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) raise(ErrorCode::io_failure, path + " is empty");
  json header = json::parse(header_line, nullptr, false);
  if (header.is_discarded()) raise(ErrorCode::io_failure, path + " has a malformed header");
  const int version = header.value("format_version", -1);
  if (version != kDatasetFormatVersion)
    raise(ErrorCode::version_mismatch,
          path + " has format_version " + std::to_string(version) + ", expected " +
              std::to_string(kDatasetFormatVersion));

  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string expected = header.value("payload_fnv1a64", "");
  if (to_hex(fnv1a64(payload)) != expected)
    raise(ErrorCode::checksum_mismatch, path + " payload does not match its checksum");

  Dataset dataset;
  dataset.codec.max_space = header["codec"].value("max_space", 64);
  dataset.codec.melody_span = header["codec"].value("melody_span", 11);
  dataset.config.window = header["dataset"].value("window", 40);
  dataset.config.stride = header["dataset"].value("stride", 1);
  dataset.config.train_pieces = header["dataset"].value("train_pieces", 350);
  dataset.stats = stats_from_json(header["stats"]);

  const int feature = dataset.codec.feature_size();
  std::istringstream lines(payload);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    json record = json::parse(line, nullptr, false);
    if (record.is_discarded()) raise(ErrorCode::io_failure, path + " has a malformed example record");
    TrainingExample example;
    for (const json& row : record["input"]) {
      if (static_cast<int>(row.size()) != feature)
        raise(ErrorCode::io_failure, path + " example row width does not match the codec config");
      for (const json& v : row) example.input.push_back(v.get<int>() ? 1 : 0);
    }
    for (const json& v : record["target"]) example.target.push_back(v.get<int>() ? 1 : 0);
    if (static_cast<int>(example.target.size()) != feature)
      raise(ErrorCode::io_failure, path + " example target width does not match the codec config");
    dataset.examples.push_back(std::move(example));
  }
  if (dataset.examples.size() != header.value("example_count", size_t{0}))
    raise(ErrorCode::checksum_mismatch, path + " example count does not match its header");
  return dataset;
}

}  // namespace intervalic::dataset
