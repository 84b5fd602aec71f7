#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <optional>
#include <random>

#include "intervalic/common.hpp"
#include "intervalic/dataset.hpp"

using intervalic::Error;
using intervalic::ErrorCode;
namespace codec = intervalic::codec;
namespace dataset = intervalic::dataset;
namespace midi = intervalic::midi;
namespace fs = std::filesystem;

namespace {

template <typename F>
std::optional<ErrorCode> thrown_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

// Monophonic grid whose soprano wobbles inside one octave.
midi::PitchGrid walk_grid(int steps, int base = 60) {
  midi::PitchGrid grid;
  for (int t = 0; t < steps; ++t) grid.steps.push_back({base + t % 5});
  return grid;
}

struct TempDir {
  fs::path path;
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path = fs::temp_directory_path() / ("intervalic_dataset_" + std::to_string(rng()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

dataset::Dataset tiny_dataset() {
  dataset::Dataset d;
  d.config.window = 10;
  d.config.stride = 5;
  std::vector<midi::PitchGrid> grids = {walk_grid(26), walk_grid(18, 64)};
  d.stats = dataset::compute_stats(grids, d.config);
  for (const midi::PitchGrid& g : grids) {
    codec::EncodedPiece enc = codec::encode_piece(g, d.codec);
    std::vector<dataset::TrainingExample> ex = dataset::window_examples(enc, d.config);
    d.examples.insert(d.examples.end(), ex.begin(), ex.end());
  }
  return d;
}

}  // namespace

TEST_CASE("windowing yields examples only when a window plus target fits") {
  dataset::DatasetConfig cfg;
  cfg.window = 40;
  cfg.stride = 40;
  codec::CodecConfig codec_cfg;

  // 42 grid steps encode to 41 timesteps: one window of 40 plus its target.
  codec::EncodedPiece enc41 = codec::encode_piece(walk_grid(42), codec_cfg);
  REQUIRE(enc41.steps.size() == 41);
  CHECK(dataset::window_examples(enc41, cfg).size() == 1);

  codec::EncodedPiece enc40 = codec::encode_piece(walk_grid(41), codec_cfg);
  CHECK(dataset::window_examples(enc40, cfg).empty());
}

TEST_CASE("stride walks overlapping windows across a piece") {
  dataset::DatasetConfig cfg;
  cfg.window = 10;
  cfg.stride = 5;
  codec::CodecConfig codec_cfg;

  codec::EncodedPiece enc = codec::encode_piece(walk_grid(26), codec_cfg);
  REQUIRE(enc.steps.size() == 25);
  std::vector<dataset::TrainingExample> examples = dataset::window_examples(enc, cfg);
  REQUIRE(examples.size() == 3);

  const int feature = codec_cfg.feature_size();
  for (size_t k = 0; k < examples.size(); ++k) {
    const dataset::TrainingExample& ex = examples[k];
    REQUIRE(ex.input.size() == static_cast<size_t>(cfg.window) * feature);
    REQUIRE(ex.target.size() == static_cast<size_t>(feature));
    const int start = static_cast<int>(k) * cfg.stride;
    for (int t = 0; t < cfg.window; ++t) {
      codec::Bits row(ex.input.begin() + static_cast<size_t>(t) * feature,
                      ex.input.begin() + static_cast<size_t>(t + 1) * feature);
      CHECK(row == enc.steps[start + t].flatten());
    }
    CHECK(ex.target == enc.steps[start + cfg.window].flatten());
  }
}

TEST_CASE("compute_stats counts steps, motions and windows") {
  dataset::DatasetConfig cfg;
  cfg.window = 1;
  cfg.stride = 1;

  midi::PitchGrid three = walk_grid(3);  // sopranos 60 61 62
  midi::PitchGrid leap;
  leap.steps = {{60}, {72}, {50, 71}};

  dataset::DatasetStats stats = dataset::compute_stats({three, leap}, cfg);
  CHECK(stats.total_timesteps == 6);
  CHECK(stats.piece_count == 2);
  CHECK(stats.soprano_motions == 4);
  CHECK(stats.motions_octave_or_larger == 1);  // 60 -> 72 only
  CHECK(stats.observed_max_space == 21);       // 71 over 50

  // Window arithmetic agrees with what window_examples actually produces.
  codec::CodecConfig codec_cfg;
  int64_t produced = 0;
  for (const midi::PitchGrid& g : {three, leap})
    produced += static_cast<int64_t>(dataset::window_examples(codec::encode_piece(g, codec_cfg), cfg).size());
  CHECK(stats.example_count == produced);
  CHECK(stats.example_count == 2);
}

TEST_CASE("stats of an empty corpus are all zero") {
  dataset::DatasetStats stats = dataset::compute_stats({}, {});
  CHECK(stats == dataset::DatasetStats{});
}

TEST_CASE("split_corpus takes training pieces from the front, in order") {
  dataset::DatasetConfig cfg;
  cfg.train_pieces = 10;
  std::vector<midi::PitchGrid> pieces;
  for (int k = 0; k < 12; ++k) pieces.push_back(walk_grid(4, 40 + k));

  dataset::CorpusSplit split = dataset::split_corpus(pieces, cfg);
  REQUIRE(split.training.size() == 10);
  REQUIRE(split.prompts.size() == 2);
  CHECK(split.training[0].steps[0] == midi::PitchSet{40});
  CHECK(split.training[9].steps[0] == midi::PitchSet{49});
  CHECK(split.prompts[0].steps[0] == midi::PitchSet{50});
  CHECK(split.prompts[1].steps[0] == midi::PitchSet{51});

  pieces.resize(9);
  CHECK(thrown_code([&] { dataset::split_corpus(pieces, cfg); }) == ErrorCode::corpus_too_small);
}

TEST_CASE("datasets roundtrip through their on-disk form") {
  TempDir tmp;
  dataset::Dataset d = tiny_dataset();
  REQUIRE(!d.examples.empty());
  const std::string path = (tmp.path / "train.jsonl").string();
  dataset::save_dataset(d, path);
  dataset::Dataset back = dataset::load_dataset(path);
  CHECK(back == d);

  // Saving the loaded copy reproduces the file byte for byte.
  const std::string again = (tmp.path / "again.jsonl").string();
  dataset::save_dataset(back, again);
  CHECK(slurp(again) == slurp(path));
}

TEST_CASE("a dataset with a foreign version number is rejected") {
  TempDir tmp;
  const std::string path = (tmp.path / "train.jsonl").string();
  dataset::save_dataset(tiny_dataset(), path);

  std::string text = slurp(path);
  size_t at = text.find("\"format_version\":1");
  REQUIRE(at != std::string::npos);
  text.replace(at, 18, "\"format_version\":9");
  spit(path, text);

  CHECK(thrown_code([&] { dataset::load_dataset(path); }) == ErrorCode::version_mismatch);
}

TEST_CASE("a dataset with a corrupted payload is rejected") {
  TempDir tmp;
  const std::string path = (tmp.path / "train.jsonl").string();
  dataset::save_dataset(tiny_dataset(), path);

  std::string text = slurp(path);
  size_t header_end = text.find('\n');
  REQUIRE(header_end != std::string::npos);
  size_t at = text.find(",0,", header_end);
  REQUIRE(at != std::string::npos);
  text.replace(at, 3, ",1,");
  spit(path, text);

  CHECK(thrown_code([&] { dataset::load_dataset(path); }) == ErrorCode::checksum_mismatch);

  CHECK(thrown_code([&] { dataset::load_dataset((tmp.path / "absent.jsonl").string()); }) ==
        ErrorCode::io_failure);
}
