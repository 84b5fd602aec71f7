#include "intervalic/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <string_view>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "intervalic/codec.hpp"
#include "intervalic/common.hpp"
#include "intervalic/dataset.hpp"
#include "intervalic/engine.hpp"
#include "intervalic/midi.hpp"
#include "intervalic/nn.hpp"

namespace intervalic::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::io_failure:
    case ErrorCode::version_mismatch:
    case ErrorCode::checksum_mismatch:
      return 5;
    case ErrorCode::divergence_detected:
    case ErrorCode::stale_cache:
      return 4;
    default:
      return 3;
  }
}

// Filename order with digit runs compared numerically, so chorale_2 sorts
// before chorale_10; ties fall back to the raw string for a total order.
bool natural_less(const std::string& a, const std::string& b) {
  size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    unsigned char ca = static_cast<unsigned char>(a[i]);
    unsigned char cb = static_cast<unsigned char>(b[j]);
    if (std::isdigit(ca) && std::isdigit(cb)) {
      size_t ia = i, jb = j;
      while (ia < a.size() && std::isdigit(static_cast<unsigned char>(a[ia]))) ++ia;
      while (jb < b.size() && std::isdigit(static_cast<unsigned char>(b[jb]))) ++jb;
      std::string_view na(a.data() + i, ia - i);
      std::string_view nb(b.data() + j, jb - j);
      na.remove_prefix(std::min(na.find_first_not_of('0'), na.size() - 1));
      nb.remove_prefix(std::min(nb.find_first_not_of('0'), nb.size() - 1));
      if (na.size() != nb.size()) return na.size() < nb.size();
      if (na != nb) return na < nb;
      i = ia;
      j = jb;
    } else {
      int la = std::tolower(ca);
      int lb = std::tolower(cb);
      if (la != lb) return la < lb;
      ++i;
      ++j;
    }
  }
  if (a.size() - i != b.size() - j) return a.size() - i < b.size() - j;
  return a < b;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::io_failure, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCode::io_failure, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out.flush()) raise(ErrorCode::io_failure, "write to " + path + " failed");
}

midi::PitchGrid grid_from_midi_bytes(const std::vector<uint8_t>& bytes) {
  midi::MidiPiece piece = midi::parse_midi(bytes);
  int64_t quantum = std::max<int64_t>(1, piece.ticks_per_quarter / 2);
  int64_t offset = midi::estimate_offset(piece, quantum);
  return midi::strip_silence(midi::quantize(piece, offset));
}

struct CorpusLoad {
  std::vector<std::string> files;        // successfully converted, natural order
  std::vector<midi::PitchGrid> grids;    // aligned with files
  std::vector<std::string> failures;     // "path: message"
  int scanned = 0;
};

CorpusLoad load_corpus(const std::string& dir, bool strict) {
  std::vector<std::string> paths;
  for (const fs::directory_entry& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".mid" || ext == ".midi") paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end(), natural_less);

  CorpusLoad corpus;
  corpus.scanned = static_cast<int>(paths.size());
  for (const std::string& path : paths) {
    try {
      midi::PitchGrid grid = grid_from_midi_bytes(read_file_bytes(path));
      if (grid.steps.empty()) raise(ErrorCode::empty_grid, "no sounding steps after quantization");
      corpus.files.push_back(path);
      corpus.grids.push_back(std::move(grid));
    } catch (const Error& e) {
      if (strict) raise(e.code(), path + ": " + e.what());
      corpus.failures.push_back(path + ": " + e.what());
    }
  }
  return corpus;
}

json stats_json(const dataset::DatasetStats& s) {
  return {{"total_timesteps", s.total_timesteps},
          {"piece_count", s.piece_count},
          {"soprano_motions", s.soprano_motions},
          {"motions_octave_or_larger", s.motions_octave_or_larger},
          {"observed_max_space", s.observed_max_space},
          {"example_count", s.example_count}};
}

void print_stats(const std::string& title, const dataset::DatasetStats& s) {
  std::cout << title << '\n';
  std::cout << "  pieces                 " << s.piece_count << '\n';
  std::cout << "  timesteps              " << s.total_timesteps << '\n';
  std::cout << "  soprano motions        " << s.soprano_motions << '\n';
  std::cout << "  octave-plus motions    " << s.motions_octave_or_larger << '\n';
  std::cout << "  observed max space     " << s.observed_max_space << '\n';
  std::cout << "  training examples      " << s.example_count << '\n';
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCode::io_failure, "cannot open " + path + " for writing");
  out << text;
  if (!out.flush()) raise(ErrorCode::io_failure, "write to " + path + " failed");
}

struct StatsOpts {
  std::string corpus;
  std::string out = "stats.json";
  dataset::DatasetConfig data;
};

int cmd_stats(const StatsOpts& opts) {
  CorpusLoad corpus = load_corpus(opts.corpus, /*strict=*/false);
  for (const std::string& failure : corpus.failures) std::cerr << "error: " << failure << '\n';

  dataset::DatasetStats corpus_stats = dataset::compute_stats(corpus.grids, opts.data);
  print_stats("corpus", corpus_stats);

  json out_json;
  out_json["format_version"] = 1;
  out_json["corpus_dir"] = opts.corpus;
  out_json["files"] = {{"scanned", corpus.scanned},
                       {"converted", corpus.files.size()},
                       {"failed", corpus.failures.size()},
                       {"failures", corpus.failures}};
  out_json["config"] = {{"window", opts.data.window},
                        {"stride", opts.data.stride},
                        {"train_pieces", opts.data.train_pieces}};
  out_json["corpus"] = stats_json(corpus_stats);

  // The corpus-level figures cover every piece; the windowed example count
  // is a training-split figure, so report that split separately when the
  // corpus is large enough to cut one.
  if (static_cast<int>(corpus.grids.size()) >= opts.data.train_pieces) {
    dataset::CorpusSplit split = dataset::split_corpus(corpus.grids, opts.data);
    dataset::DatasetStats train_stats = dataset::compute_stats(split.training, opts.data);
    print_stats("training split", train_stats);
    out_json["training_split"] = stats_json(train_stats);
  } else {
    out_json["training_split"] = nullptr;
  }

  if (!opts.out.empty()) {
    write_text_file(opts.out, out_json.dump(2) + "\n");
    std::cout << "wrote " << opts.out << '\n';
  }
  return corpus.failures.empty() && !corpus.grids.empty() ? 0 : 3;
}

struct PrepareOpts {
  std::string corpus;
  std::string out;
  dataset::DatasetConfig data;
  int max_space = 64;
};

int cmd_prepare(const PrepareOpts& opts) {
  CorpusLoad corpus = load_corpus(opts.corpus, /*strict=*/true);
  dataset::CorpusSplit split = dataset::split_corpus(corpus.grids, opts.data);

  codec::CodecConfig cc;
  cc.max_space = opts.max_space;

  dataset::Dataset ds;
  ds.codec = cc;
  ds.config = opts.data;
  ds.stats = dataset::compute_stats(split.training, opts.data);
  for (size_t i = 0; i < split.training.size(); ++i) {
    codec::EncodedPiece enc;
    try {
      enc = codec::encode_piece(split.training[i], cc);
    } catch (const Error& e) {
      raise(e.code(), corpus.files[i] + ": " + e.what());
    }
    std::vector<dataset::TrainingExample> examples = dataset::window_examples(enc, opts.data);
    ds.examples.insert(ds.examples.end(), std::make_move_iterator(examples.begin()),
                       std::make_move_iterator(examples.end()));
  }

  dataset::save_dataset(ds, opts.out);
  std::cout << "examples: " << ds.examples.size() << '\n';
  std::cout << "wrote " << opts.out << '\n';
  return 0;
}

struct TrainOpts {
  std::string data_path;
  std::string out;
  std::string loss_csv;
  engine::TrainConfig config;
};

int cmd_train(const TrainOpts& opts) {
  dataset::Dataset ds = dataset::load_dataset(opts.data_path);
  engine::TrainResult result = engine::train(ds, opts.config, nullptr, &std::cerr);
  engine::save_checkpoint(result.checkpoint, opts.out);
  std::string csv = opts.loss_csv.empty() ? opts.out + ".loss.csv" : opts.loss_csv;
  engine::write_loss_csv(result.curve, csv);
  std::cout << "final loss " << result.checkpoint.final_loss << " after "
            << result.checkpoint.epochs_run << " epochs\n";
  std::cout << "wrote " << opts.out << " and " << csv << '\n';
  return 0;
}

struct GenerateOpts {
  std::string model;
  std::string prompt;
  std::string out;
  std::string json_out;
  engine::GenerationConfig gen;
  int64_t prompt_offset = 0;
};

codec::EncodedPiece load_prompt_piece(const std::string& path, const codec::CodecConfig& expected) {
  std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), "MThd", 4) == 0) {
    midi::PitchGrid grid = grid_from_midi_bytes(bytes);
    if (grid.steps.empty()) raise(ErrorCode::empty_grid, path + ": no sounding steps after quantization");
    return codec::encode_piece(grid, expected);
  }
  std::string text(bytes.begin(), bytes.end());
  std::string line = text.substr(0, text.find('\n'));
  codec::EncodedPiece enc = codec::parse_piece_record(line);
  if (enc.config.max_space != expected.max_space || enc.config.melody_span != expected.melody_span) {
    raise(ErrorCode::architecture_mismatch,
          path + ": prompt encoding configuration differs from the checkpoint");
  }
  return enc;
}

int cmd_generate(const GenerateOpts& opts) {
  engine::Checkpoint cp = engine::load_checkpoint(opts.model);
  codec::EncodedPiece prompt_piece = load_prompt_piece(opts.prompt, cp.codec);

  const int64_t window = cp.data.window;
  const int64_t available = static_cast<int64_t>(prompt_piece.steps.size());
  if (opts.prompt_offset < 0 || opts.prompt_offset + window > available) {
    raise(ErrorCode::prompt_length_mismatch,
          "prompt provides " + std::to_string(available) + " encoded steps, but offset " +
              std::to_string(opts.prompt_offset) + " plus window " + std::to_string(window) +
              " are needed");
  }
  std::vector<codec::TimestepVector> prompt(
      prompt_piece.steps.begin() + opts.prompt_offset,
      prompt_piece.steps.begin() + opts.prompt_offset + window);

  engine::GenerationResult result = engine::generate(cp, prompt, opts.gen);
  write_file_bytes(opts.out, engine::render(result.piece, opts.gen.opening_pitch));

  std::string json_path = opts.json_out.empty() ? opts.out + ".jsonl" : opts.json_out;
  std::ofstream record(json_path, std::ios::binary | std::ios::trunc);
  if (!record) raise(ErrorCode::io_failure, "cannot open " + json_path + " for writing");
  codec::write_piece_record(record, result.piece, result.prompt_steps);
  if (!record.flush()) raise(ErrorCode::io_failure, "write to " + json_path + " failed");

  std::cout << "generated " << opts.gen.steps << " steps after a " << window << "-step prompt\n";
  std::cout << "wrote " << opts.out << " and " << json_path << '\n';
  return 0;
}

struct EncodeOpts {
  std::string in;
  std::string out;
  int max_space = 64;
};

int cmd_encode(const EncodeOpts& opts) {
  midi::PitchGrid grid = grid_from_midi_bytes(read_file_bytes(opts.in));
  codec::CodecConfig cc;
  cc.max_space = opts.max_space;
  codec::EncodedPiece enc = codec::encode_piece(grid, cc);

  std::ofstream out(opts.out, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCode::io_failure, "cannot open " + opts.out + " for writing");
  codec::write_piece_record(out, enc);
  if (!out.flush()) raise(ErrorCode::io_failure, "write to " + opts.out + " failed");
  std::cout << "encoded " << enc.steps.size() << " steps\n";
  std::cout << "wrote " << opts.out << '\n';
  return 0;
}

struct DecodeOpts {
  std::string in;
  std::string out;
  int opening = 72;
};

int cmd_decode(const DecodeOpts& opts) {
  std::vector<uint8_t> bytes = read_file_bytes(opts.in);
  std::string text(bytes.begin(), bytes.end());
  std::string line = text.substr(0, text.find('\n'));
  codec::EncodedPiece enc = codec::parse_piece_record(line);

  codec::DecodeResult decoded = codec::decode_piece(enc, opts.opening);
  for (const codec::DecodeWarning& w : decoded.warnings) {
    std::cerr << "note: step " << w.step << " folded pitch " << w.from_pitch << " into range as "
              << w.to_pitch << '\n';
  }
  write_file_bytes(opts.out, midi::write_midi(midi::grid_to_piece(decoded.grid)));
  std::cout << "wrote " << opts.out << '\n';
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"interval-encoded chorale modeling pipeline"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "read option defaults from an INI/TOML file");
  app.require_subcommand(1);

  StatsOpts stats_opts;
  CLI::App* stats = app.add_subcommand("stats", "corpus statistics from a directory of MIDI files");
  stats->add_option("--corpus", stats_opts.corpus, "directory of .mid/.midi files")
      ->required()
      ->check(CLI::ExistingDirectory);
  stats->add_option("--out", stats_opts.out, "JSON output path");
  stats->add_option("--window", stats_opts.data.window, "window length in timesteps")
      ->check(CLI::Range(2, 1 << 20));
  stats->add_option("--stride", stats_opts.data.stride, "window stride in timesteps")
      ->check(CLI::PositiveNumber);
  stats->add_option("--train-pieces", stats_opts.data.train_pieces, "size of the training split")
      ->check(CLI::PositiveNumber);

  PrepareOpts prepare_opts;
  CLI::App* prepare = app.add_subcommand("prepare", "build a training dataset from a corpus");
  prepare->add_option("--corpus", prepare_opts.corpus, "directory of .mid/.midi files")
      ->required()
      ->check(CLI::ExistingDirectory);
  prepare->add_option("--out", prepare_opts.out, "dataset output path")->required();
  prepare->add_option("--window", prepare_opts.data.window, "window length in timesteps")
      ->check(CLI::Range(2, 1 << 20));
  prepare->add_option("--stride", prepare_opts.data.stride, "window stride in timesteps")
      ->check(CLI::PositiveNumber);
  prepare->add_option("--train-pieces", prepare_opts.data.train_pieces, "size of the training split")
      ->check(CLI::PositiveNumber);
  prepare->add_option("--max-space", prepare_opts.max_space, "chord vector length in half-steps")
      ->check(CLI::PositiveNumber);

  TrainOpts train_opts;
  CLI::App* train = app.add_subcommand("train", "train a model on a prepared dataset");
  train->add_option("--data", train_opts.data_path, "dataset file from prepare")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--out", train_opts.out, "checkpoint output path")->required();
  train->add_option("--epochs", train_opts.config.epochs, "epoch cap")->check(CLI::NonNegativeNumber);
  train->add_option("--target-loss", train_opts.config.target_loss, "stop once loss reaches this")
      ->check(CLI::PositiveNumber);
  train->add_option("--lr", train_opts.config.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  train->add_option("--beta1", train_opts.config.beta1, "Adam first-moment decay");
  train->add_option("--beta2", train_opts.config.beta2, "Adam second-moment decay");
  train->add_option("--epsilon", train_opts.config.epsilon, "Adam denominator floor")
      ->check(CLI::PositiveNumber);
  train->add_option("--seed", train_opts.config.seed, "initialization seed");
  train->add_option("--log-every", train_opts.config.log_every, "progress cadence in epochs, 0 silences")
      ->check(CLI::NonNegativeNumber);
  train->add_option("--loss-csv", train_opts.loss_csv, "loss curve path (default <out>.loss.csv)");

  GenerateOpts generate_opts;
  CLI::App* generate = app.add_subcommand("generate", "continue a prompt with a trained model");
  generate->add_option("--model", generate_opts.model, "checkpoint from train")
      ->required()
      ->check(CLI::ExistingFile);
  generate->add_option("--prompt", generate_opts.prompt, "prompt source: SMF or encoded JSON-lines file")
      ->required()
      ->check(CLI::ExistingFile);
  generate->add_option("--out", generate_opts.out, "SMF output path")->required();
  generate->add_option("--json-out", generate_opts.json_out,
                       "encoded output path (default <out>.jsonl)");
  generate->add_option("--steps", generate_opts.gen.steps, "timesteps to generate")
      ->required()
      ->check(CLI::NonNegativeNumber);
  generate->add_option("--opening", generate_opts.gen.opening_pitch, "opening soprano MIDI pitch")
      ->check(CLI::Range(0, 127));
  generate->add_option("--prompt-offset", generate_opts.prompt_offset,
                       "first prompt step within the prompt source")
      ->check(CLI::NonNegativeNumber);
  generate->add_option("--threshold", generate_opts.gen.chord_threshold,
                       "chord activation threshold, strictly between 0 and 1");
  generate->add_option("--max-active", generate_opts.gen.chord_max_active,
                       "maximum simultaneous chord notes")
      ->check(CLI::NonNegativeNumber);

  EncodeOpts encode_opts;
  CLI::App* encode = app.add_subcommand("encode", "convert one MIDI file to the interval encoding");
  encode->add_option("--in", encode_opts.in, "SMF input path")->required()->check(CLI::ExistingFile);
  encode->add_option("--out", encode_opts.out, "encoded JSON-lines output path")->required();
  encode->add_option("--max-space", encode_opts.max_space, "chord vector length in half-steps")
      ->check(CLI::PositiveNumber);

  DecodeOpts decode_opts;
  CLI::App* decode = app.add_subcommand("decode", "convert an encoded piece back to MIDI");
  decode->add_option("--in", decode_opts.in, "encoded JSON-lines input path")
      ->required()
      ->check(CLI::ExistingFile);
  decode->add_option("--opening", decode_opts.opening, "opening soprano MIDI pitch")
      ->check(CLI::Range(0, 127));
  decode->add_option("--out", decode_opts.out, "SMF output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (app.got_subcommand(generate)) {
    double t = generate_opts.gen.chord_threshold;
    if (!(t > 0.0 && t < 1.0)) {
      std::cerr << "error: --threshold must be strictly between 0 and 1\n";
      return 2;
    }
  }

  try {
    if (app.got_subcommand(stats)) return cmd_stats(stats_opts);
    if (app.got_subcommand(prepare)) return cmd_prepare(prepare_opts);
    if (app.got_subcommand(train)) return cmd_train(train_opts);
    if (app.got_subcommand(generate)) return cmd_generate(generate_opts);
    if (app.got_subcommand(encode)) return cmd_encode(encode_opts);
    if (app.got_subcommand(decode)) return cmd_decode(decode_opts);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 5;
  }
  return 2;
}

}  // namespace intervalic::cli
