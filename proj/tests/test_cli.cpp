#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "intervalic/cli.hpp"
#include "intervalic/codec.hpp"
#include "intervalic/dataset.hpp"
#include "intervalic/midi.hpp"

namespace cli = intervalic::cli;
namespace codec = intervalic::codec;
namespace dataset = intervalic::dataset;
namespace midi = intervalic::midi;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path = fs::temp_directory_path() / ("intervalic_cli_" + std::to_string(rng()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"intervalic"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

struct CaptureCout {
  std::ostringstream oss;
  std::streambuf* old = std::cout.rdbuf(oss.rdbuf());
  ~CaptureCout() { std::cout.rdbuf(old); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// A two-voice piece: soprano walks +1/+1/-2, a drone a third below on even
// steps, written out as eighth notes.
midi::PitchGrid demo_grid(int steps, int base) {
  midi::PitchGrid grid;
  for (int t = 0; t < steps; ++t) {
    midi::PitchSet step{base + t % 3};
    if (t % 2 == 0) step.insert(base + t % 3 - 4);
    grid.steps.push_back(step);
  }
  return grid;
}

void write_piece_file(const fs::path& path, const midi::PitchGrid& grid) {
  std::vector<uint8_t> bytes = midi::write_midi(midi::grid_to_piece(grid, 480));
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// piece_2 (26 steps) sorts before piece_10 (16 steps) in natural order.
void write_demo_corpus(const fs::path& dir) {
  write_piece_file(dir / "piece_2.mid", demo_grid(26, 60));
  write_piece_file(dir / "piece_10.mid", demo_grid(16, 67));
  write_piece_file(dir / "piece_11.mid", demo_grid(26, 64));
}

}  // namespace

TEST_CASE("usage errors exit with code 2 and help with 0") {
  CaptureCout quiet;
  CHECK(run_cli({}) == 2);
  CHECK(run_cli({"stats", "--bogus"}) == 2);
  CHECK(run_cli({"--help"}) == 0);
  CHECK(run_cli({"train", "--data", "/nonexistent/ds.jsonl", "--out", "/tmp/x.ckpt"}) == 2);
}

TEST_CASE("stats reports corpus and training-split figures") {
  TempDir tmp;
  fs::create_directories(tmp.path / "corpus");
  write_demo_corpus(tmp.path / "corpus");

  const std::string out = tmp.file("stats.json");
  {
    CaptureCout quiet;
    CHECK(run_cli({"stats", "--corpus", tmp.file("corpus"), "--out", out, "--window", "10",
                   "--stride", "5", "--train-pieces", "1"}) == 0);
  }

  json report = json::parse(slurp(out));
  CHECK(report["files"]["scanned"] == 3);
  CHECK(report["files"]["converted"] == 3);
  CHECK(report["files"]["failed"] == 0);
  CHECK(report["corpus"]["piece_count"] == 3);
  CHECK(report["corpus"]["total_timesteps"] == 26 + 16 + 26);
  CHECK(report["corpus"]["soprano_motions"] == 25 + 15 + 25);
  CHECK(report["corpus"]["motions_octave_or_larger"] == 0);
  CHECK(report["corpus"]["observed_max_space"] == 4);
  CHECK(report["corpus"]["example_count"] == 3 + 1 + 3);

  // train-pieces 1 keeps only the natural-sort first file, piece_2 with its
  // 26 steps; a lexicographic sort would have kept 16-step piece_10 instead.
  CHECK(report["training_split"]["piece_count"] == 1);
  CHECK(report["training_split"]["example_count"] == 3);
}

TEST_CASE("stats tolerates broken files but says so in its exit code") {
  TempDir tmp;
  fs::create_directories(tmp.path / "corpus");
  write_demo_corpus(tmp.path / "corpus");
  std::ofstream(tmp.path / "corpus" / "broken.mid") << "this is not a midi file";

  const std::string out = tmp.file("stats.json");
  {
    CaptureCout quiet;
    CHECK(run_cli({"stats", "--corpus", tmp.file("corpus"), "--out", out, "--train-pieces", "1"}) == 3);
  }
  json report = json::parse(slurp(out));
  CHECK(report["files"]["scanned"] == 4);
  CHECK(report["files"]["converted"] == 3);
  CHECK(report["files"]["failed"] == 1);
  CHECK(report["corpus"]["piece_count"] == 3);
}

TEST_CASE("stats on an empty directory writes zeros and fails") {
  TempDir tmp;
  fs::create_directories(tmp.path / "corpus");
  const std::string out = tmp.file("stats.json");
  CaptureCout quiet;
  CHECK(run_cli({"stats", "--corpus", tmp.file("corpus"), "--out", out}) == 3);
  json report = json::parse(slurp(out));
  CHECK(report["corpus"]["piece_count"] == 0);
  CHECK(report["corpus"]["example_count"] == 0);
  CHECK(report["training_split"].is_null());
}

TEST_CASE("prepare is strict, deterministic, and counts its windows") {
  TempDir tmp;
  fs::create_directories(tmp.path / "corpus");
  write_demo_corpus(tmp.path / "corpus");
  const std::string out = tmp.file("train.jsonl");

  {
    CaptureCout capture;
    CHECK(run_cli({"prepare", "--corpus", tmp.file("corpus"), "--out", out, "--window", "10",
                   "--stride", "5", "--train-pieces", "2"}) == 0);
    CHECK(capture.oss.str().find("examples: 4") != std::string::npos);
  }

  // Natural order puts piece_2 (3 windows) and piece_10 (1 window) in the
  // training split.
  dataset::Dataset ds = dataset::load_dataset(out);
  CHECK(ds.examples.size() == 4);
  CHECK(ds.stats.example_count == 4);
  CHECK(ds.stats.piece_count == 2);
  CHECK(ds.config.window == 10);
  CHECK(ds.config.stride == 5);

  const std::string again = tmp.file("again.jsonl");
  {
    CaptureCout quiet;
    CHECK(run_cli({"prepare", "--corpus", tmp.file("corpus"), "--out", again, "--window", "10",
                   "--stride", "5", "--train-pieces", "2"}) == 0);
  }
  CHECK(slurp(again) == slurp(out));

  std::ofstream(tmp.path / "corpus" / "broken.mid") << "this is not a midi file";
  {
    CaptureCout quiet;
    CHECK(run_cli({"prepare", "--corpus", tmp.file("corpus"), "--out", tmp.file("strict.jsonl"),
                   "--window", "10", "--stride", "5", "--train-pieces", "2"}) == 3);
  }
  CHECK(!fs::exists(tmp.file("strict.jsonl")));
}

TEST_CASE("prepare refuses a corpus smaller than the training split") {
  TempDir tmp;
  fs::create_directories(tmp.path / "corpus");
  write_demo_corpus(tmp.path / "corpus");
  CaptureCout quiet;
  CHECK(run_cli({"prepare", "--corpus", tmp.file("corpus"), "--out", tmp.file("ds.jsonl"),
                 "--train-pieces", "5"}) == 3);
}

TEST_CASE("encode and decode invert each other through files") {
  TempDir tmp;
  write_piece_file(tmp.path / "motif.mid", {{{67}, {70}, {69}, {67}}});

  CaptureCout quiet;
  const std::string enc_path = tmp.file("motif.jsonl");
  CHECK(run_cli({"encode", "--in", tmp.file("motif.mid"), "--out", enc_path}) == 0);

  codec::EncodedPiece enc = codec::parse_piece_record(slurp(enc_path));
  REQUIRE(enc.steps.size() == 3);
  std::vector<int> intervals;
  for (const codec::TimestepVector& s : enc.steps)
    intervals.push_back(codec::melody_interval_of(s.melody, enc.config));
  CHECK(intervals == std::vector<int>{3, -1, -2});

  const std::string back = tmp.file("back.mid");
  CHECK(run_cli({"decode", "--in", enc_path, "--opening", "67", "--out", back}) == 0);
  std::string bytes = slurp(back);
  midi::PitchGrid grid = midi::quantize(
      midi::parse_midi(std::vector<uint8_t>(bytes.begin(), bytes.end())), 0);
  REQUIRE(grid.steps.size() == 4);
  CHECK(grid.steps == std::vector<midi::PitchSet>{{67}, {70}, {69}, {67}});

  // The same intervals land a fifth higher when decoded from 74.
  const std::string high = tmp.file("high.mid");
  CHECK(run_cli({"decode", "--in", enc_path, "--opening", "74", "--out", high}) == 0);
  bytes = slurp(high);
  grid = midi::quantize(midi::parse_midi(std::vector<uint8_t>(bytes.begin(), bytes.end())), 0);
  CHECK(grid.steps == std::vector<midi::PitchSet>{{74}, {77}, {76}, {74}});
}

TEST_CASE("train and generate run end to end on a small corpus") {
  TempDir tmp;
  fs::create_directories(tmp.path / "corpus");
  write_demo_corpus(tmp.path / "corpus");
  const std::string ds_path = tmp.file("train.jsonl");
  const std::string model = tmp.file("model.ckpt");

  CaptureCout quiet;
  REQUIRE(run_cli({"prepare", "--corpus", tmp.file("corpus"), "--out", ds_path, "--window", "10",
                   "--stride", "5", "--train-pieces", "2"}) == 0);
  REQUIRE(run_cli({"train", "--data", ds_path, "--out", model, "--epochs", "6", "--log-every", "0",
                   "--seed", "7"}) == 0);
  CHECK(fs::exists(model));

  // Default csv path, one header plus epochs 0..6.
  std::string csv = slurp(model + ".loss.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 8);
  CHECK(csv.rfind("epoch,loss\n", 0) == 0);

  const std::string gen_mid = tmp.file("gen.mid");
  REQUIRE(run_cli({"generate", "--model", model, "--prompt", tmp.file("corpus/piece_2.mid"),
                   "--steps", "5", "--opening", "72", "--out", gen_mid}) == 0);

  std::string gen_bytes = slurp(gen_mid);
  midi::MidiPiece out_piece =
      midi::parse_midi(std::vector<uint8_t>(gen_bytes.begin(), gen_bytes.end()));
  CHECK(!out_piece.events.empty());

  std::string record = slurp(gen_mid + ".jsonl");
  codec::EncodedPiece continued = codec::parse_piece_record(record);
  CHECK(continued.steps.size() == 15);  // 10 prompt steps plus 5 generated
  CHECK(record.find("\"prompt_steps\":10") != std::string::npos);

  // Identical inputs generate identical bytes.
  const std::string gen2 = tmp.file("gen2.mid");
  REQUIRE(run_cli({"generate", "--model", model, "--prompt", tmp.file("corpus/piece_2.mid"),
                   "--steps", "5", "--opening", "72", "--out", gen2}) == 0);
  CHECK(slurp(gen2) == gen_bytes);

  // An offset slides the prompt window within the source piece.
  const std::string gen3 = tmp.file("gen3.mid");
  REQUIRE(run_cli({"generate", "--model", model, "--prompt", tmp.file("corpus/piece_2.mid"),
                   "--steps", "0", "--prompt-offset", "3", "--out", gen3}) == 0);
  codec::EncodedPiece window_only = codec::parse_piece_record(slurp(gen3 + ".jsonl"));
  CHECK(window_only.steps.size() == 10);

  CHECK(run_cli({"generate", "--model", model, "--prompt", tmp.file("corpus/piece_2.mid"),
                 "--steps", "1", "--prompt-offset", "50", "--out", tmp.file("bad.mid")}) == 3);
  CHECK(run_cli({"generate", "--model", model, "--prompt", tmp.file("corpus/piece_2.mid"),
                 "--steps", "1", "--threshold", "1.5", "--out", tmp.file("bad.mid")}) == 2);

  // A corrupted checkpoint is a persistence failure, exit code 5.
  std::string tampered = slurp(model);
  tampered[tampered.find('\n') + 9] ^= 0x01;
  std::ofstream(model, std::ios::binary) << tampered;
  CHECK(run_cli({"generate", "--model", model, "--prompt", tmp.file("corpus/piece_2.mid"),
                 "--steps", "1", "--out", tmp.file("bad.mid")}) == 5);
}

TEST_CASE("a config file supplies defaults that flags can override") {
  TempDir tmp;
  fs::create_directories(tmp.path / "corpus");
  write_demo_corpus(tmp.path / "corpus");
  const std::string ds_path = tmp.file("train.jsonl");
  CaptureCout quiet;
  REQUIRE(run_cli({"prepare", "--corpus", tmp.file("corpus"), "--out", ds_path, "--window", "10",
                   "--stride", "5", "--train-pieces", "2"}) == 0);

  std::ofstream(tmp.file("run.ini")) << "[train]\nepochs=3\nlog-every=0\n";
  const std::string model = tmp.file("model.ckpt");
  REQUIRE(run_cli({"--config", tmp.file("run.ini"), "train", "--data", ds_path, "--out", model}) == 0);
  std::string csv = slurp(model + ".loss.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header plus epochs 0..3
}
