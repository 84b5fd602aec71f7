#include "intervalic/engine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <ostream>

#include <json.hpp>

#include "intervalic/common.hpp"
#include "intervalic/midi.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload I/O assumes a little-endian host");

namespace intervalic::engine {
namespace {

using nlohmann::json;

constexpr int kCheckpointFormatVersion = 1;

uint64_t fnv1a64(const std::string& bytes) {
  uint64_t hash = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  return hash;
}

void zero_tensors(nn::ModelParams* params) {
  for (auto& [name, tensor] : params->tensors()) std::fill(tensor->v.begin(), tensor->v.end(), 0.0);
}

void scale_tensors(nn::ModelParams* params, double factor) {
  for (auto& [name, tensor] : params->tensors()) {
    for (double& x : tensor->v) x *= factor;
  }
}

nn::Tensor example_input_tensor(const codec::Bits& input, int window, int features) {
  nn::Tensor t = nn::Tensor::zeros({window, features});
  if (static_cast<int64_t>(input.size()) != t.size()) {
    raise(ErrorCode::shape_mismatch, "training example width does not match window * feature size");
  }
  for (size_t k = 0; k < input.size(); ++k) t.v[k] = input[k];
  return t;
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

TrainResult train(const dataset::Dataset& data, const TrainConfig& config,
                  const nn::ModelParams* init, std::ostream* log) {
  if (data.examples.empty()) raise(ErrorCode::corpus_too_small, "train: dataset holds no examples");

  const int window = data.config.window;
  const int features = data.codec.feature_size();

  nn::Architecture arch;
  arch.melody_size = data.codec.melody_size();
  arch.chord_size = data.codec.max_space;
  nn::ModelParams params = init != nullptr ? *init : nn::init_params(config.seed, arch);
  if (params.arch.features() != features) {
    raise(ErrorCode::architecture_mismatch,
          "train: model feature width " + std::to_string(params.arch.features()) +
              " does not match dataset feature width " + std::to_string(features));
  }

  std::vector<nn::Tensor> inputs;
  std::vector<codec::Bits> targets;
  inputs.reserve(data.examples.size());
  targets.reserve(data.examples.size());
  for (const dataset::TrainingExample& example : data.examples) {
    inputs.push_back(example_input_tensor(example.input, window, features));
    if (static_cast<int>(example.target.size()) != features) {
      raise(ErrorCode::shape_mismatch, "training example target width does not match feature size");
    }
    targets.push_back(example.target);
  }

  nn::AdamState adam =
      nn::AdamState::init(params, config.lr, config.beta1, config.beta2, config.epsilon);
  nn::ModelParams grads = nn::zero_params(params.arch);
  nn::BatchCache cache;
  const double inv_n = 1.0 / static_cast<double>(data.examples.size());

  TrainResult result;
  int64_t updates = 0;
  double initial_loss = 0.0;
  int divergence_streak = 0;

  while (true) {
    zero_tensors(&grads);
    double loss = nn::batch_forward_backward(inputs, targets, params, &grads, &cache) * inv_n;
    result.curve.push_back({updates, loss});

    if (!std::isfinite(loss)) {
      raise(ErrorCode::divergence_detected,
            "train: loss became non-finite after " + std::to_string(updates) + " updates");
    }
    if (updates == 0) {
      initial_loss = loss;
    } else {
      divergence_streak = loss > 10.0 * initial_loss ? divergence_streak + 1 : 0;
      if (divergence_streak >= 100) {
        raise(ErrorCode::divergence_detected,
              "train: loss exceeded 10x the initial loss for 100 consecutive epochs");
      }
    }
    bool done = loss <= config.target_loss || updates >= config.epochs;
    if (log != nullptr && config.log_every > 0 && (updates % config.log_every == 0 || done)) {
      *log << "epoch " << updates << " loss " << format_double(loss) << '\n';
    }
    if (done) break;

    scale_tensors(&grads, inv_n);
    nn::adam_step(&params, grads, &adam);
    ++updates;
  }

  result.checkpoint.params = std::move(params);
  result.checkpoint.codec = data.codec;
  result.checkpoint.data = data.config;
  result.checkpoint.final_loss = result.curve.back().loss;
  result.checkpoint.epochs_run = updates;
  result.checkpoint.seed = config.seed;
  return result;
}

codec::TimestepVector quantize_output(const std::vector<double>& melody_probs,
                                      const std::vector<double>& chord_probs,
                                      const GenerationConfig& config) {
  codec::TimestepVector step;
  step.melody.assign(melody_probs.size(), 0);
  step.chord.assign(chord_probs.size(), 0);
  if (melody_probs.empty()) raise(ErrorCode::shape_mismatch, "quantize_output: empty melody probabilities");

  size_t best = 0;
  for (size_t j = 1; j < melody_probs.size(); ++j) {
    if (melody_probs[j] > melody_probs[best]) best = j;
  }
  step.melody[best] = 1;

  // Highest probability first, index as the deterministic tiebreak.
  std::vector<size_t> order(chord_probs.size());
  for (size_t j = 0; j < order.size(); ++j) order[j] = j;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (chord_probs[a] != chord_probs[b]) return chord_probs[a] > chord_probs[b];
    return a < b;
  });
  int active = 0;
  for (size_t j : order) {
    if (active >= config.chord_max_active || chord_probs[j] <= config.chord_threshold) break;
    step.chord[j] = 1;
    ++active;
  }
  return step;
}

GenerationResult generate(const Checkpoint& cp, const std::vector<codec::TimestepVector>& prompt,
                          const GenerationConfig& config) {
  const int window = cp.data.window;
  const int melody = cp.codec.melody_size();
  const int chord = cp.codec.max_space;
  const int features = cp.codec.feature_size();

  if (static_cast<int>(prompt.size()) != window) {
    raise(ErrorCode::prompt_length_mismatch, "generate: prompt holds " + std::to_string(prompt.size()) +
                                                 " steps, the trained window is " +
                                                 std::to_string(window));
  }
  if (cp.params.arch.features() != features || cp.params.arch.melody_size != melody) {
    raise(ErrorCode::architecture_mismatch, "generate: checkpoint tensors do not match its codec config");
  }
  for (const codec::TimestepVector& step : prompt) {
    if (static_cast<int>(step.melody.size()) != melody || static_cast<int>(step.chord.size()) != chord) {
      raise(ErrorCode::architecture_mismatch, "generate: prompt width does not match the checkpoint");
    }
  }

  GenerationResult result;
  result.prompt_steps = window;
  result.piece.config = cp.codec;
  result.piece.steps = prompt;

  nn::Tensor input = nn::Tensor::zeros({window, features});
  for (int64_t n = 0; n < config.steps; ++n) {
    const size_t base = result.piece.steps.size() - static_cast<size_t>(window);
    for (int t = 0; t < window; ++t) {
      codec::Bits flat = result.piece.steps[base + t].flatten();
      for (int k = 0; k < features; ++k) input.at(t, k) = flat[k];
    }
    nn::ModelOutput out = nn::model_forward(input, cp.params);
    result.piece.steps.push_back(quantize_output(out.melody_probs, out.chord_probs, config));
  }
  return result;
}

std::vector<uint8_t> render(const codec::EncodedPiece& enc, int opening_pitch) {
  codec::DecodeResult decoded = codec::decode_piece(enc, opening_pitch);
  return midi::write_midi(midi::grid_to_piece(decoded.grid));
}

void save_checkpoint(const Checkpoint& cp, const std::string& path) {
  json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["kind"] = "checkpoint";
  header["architecture"] = {
      {"melody_size", cp.params.arch.melody_size}, {"chord_size", cp.params.arch.chord_size},
      {"lstm1", cp.params.arch.lstm1},             {"lstm2", cp.params.arch.lstm2},
      {"dense1", cp.params.arch.dense1},           {"dense2", cp.params.arch.dense2},
      {"gate_order", json::array({"input", "forget", "candidate", "output"})},
  };
  header["codec"] = {{"max_space", cp.codec.max_space}, {"melody_span", cp.codec.melody_span}};
  header["dataset"] = {{"window", cp.data.window},
                       {"stride", cp.data.stride},
                       {"train_pieces", cp.data.train_pieces}};
  header["metadata"] = {
      {"final_loss", cp.final_loss}, {"epochs_run", cp.epochs_run}, {"seed", cp.seed}};

  json manifest = json::array();
  auto named = cp.params.tensors();
  for (const auto& [name, tensor] : named) {
    manifest.push_back({{"name", name}, {"shape", tensor->shape}});
  }
  header["tensors"] = manifest;

  std::string blob = header.dump();
  blob += '\n';
  for (const auto& [name, tensor] : named) {
    size_t offset = blob.size();
    blob.resize(offset + tensor->v.size() * sizeof(double));
    std::memcpy(blob.data() + offset, tensor->v.data(), tensor->v.size() * sizeof(double));
  }
  uint64_t checksum = fnv1a64(blob);
  for (int b = 0; b < 8; ++b) blob.push_back(static_cast<char>((checksum >> (8 * b)) & 0xFF));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::io_failure, "cannot open " + tmp + " for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out.flush()) raise(ErrorCode::io_failure, "write to " + tmp + " failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    raise(ErrorCode::io_failure, "cannot move " + tmp + " into place");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::io_failure, "cannot open " + path);
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (blob.size() < 9) raise(ErrorCode::checksum_mismatch, path + " is too short to be a checkpoint");
  uint64_t stored = 0;
  for (int b = 0; b < 8; ++b) {
    stored |= static_cast<uint64_t>(static_cast<unsigned char>(blob[blob.size() - 8 + b])) << (8 * b);
  }
  blob.resize(blob.size() - 8);
  if (fnv1a64(blob) != stored)
    raise(ErrorCode::checksum_mismatch, path + " content does not match its checksum");

  size_t newline = blob.find('\n');
  if (newline == std::string::npos) raise(ErrorCode::io_failure, path + " has no metadata header");
  json header = json::parse(blob.substr(0, newline), nullptr, false);
  if (header.is_discarded()) raise(ErrorCode::io_failure, path + " has a malformed metadata header");

  int version = header.value("format_version", -1);
  if (version != kCheckpointFormatVersion) {
    raise(ErrorCode::version_mismatch, path + " has format_version " + std::to_string(version) +
                                           ", expected " + std::to_string(kCheckpointFormatVersion));
  }
  const json& arch_json = header["architecture"];
  json expected_order = json::array({"input", "forget", "candidate", "output"});
  if (arch_json.value("gate_order", json::array()) != expected_order) {
    raise(ErrorCode::version_mismatch, path + " uses an unsupported gate order");
  }

  Checkpoint cp;
  nn::Architecture arch;
  arch.melody_size = arch_json.value("melody_size", 0);
  arch.chord_size = arch_json.value("chord_size", 0);
  arch.lstm1 = arch_json.value("lstm1", 0);
  arch.lstm2 = arch_json.value("lstm2", 0);
  arch.dense1 = arch_json.value("dense1", 0);
  arch.dense2 = arch_json.value("dense2", 0);
  if (arch.melody_size < 1 || arch.chord_size < 1 || arch.lstm1 < 1 || arch.lstm2 < 1 ||
      arch.dense1 < 1 || arch.dense2 < 1) {
    raise(ErrorCode::io_failure, path + " declares an invalid architecture");
  }
  cp.params = nn::zero_params(arch);
  cp.codec.max_space = header["codec"].value("max_space", 64);
  cp.codec.melody_span = header["codec"].value("melody_span", 11);
  cp.data.window = header["dataset"].value("window", 40);
  cp.data.stride = header["dataset"].value("stride", 1);
  cp.data.train_pieces = header["dataset"].value("train_pieces", 350);
  cp.final_loss = header["metadata"].value("final_loss", 0.0);
  cp.epochs_run = header["metadata"].value("epochs_run", static_cast<int64_t>(0));
  cp.seed = header["metadata"].value("seed", static_cast<uint64_t>(0));

  auto named = cp.params.tensors();
  const json& manifest = header["tensors"];
  if (!manifest.is_array() || manifest.size() != named.size()) {
    raise(ErrorCode::io_failure, path + " tensor manifest does not match the declared architecture");
  }
  size_t offset = newline + 1;
  for (size_t i = 0; i < named.size(); ++i) {
    const json& entry = manifest[i];
    std::vector<int> shape = entry.value("shape", std::vector<int>{});
    if (entry.value("name", "") != named[i].name || shape != named[i].tensor->shape) {
      raise(ErrorCode::io_failure,
            path + " tensor manifest entry " + std::to_string(i) + " is out of order or misshapen");
    }
    size_t bytes = named[i].tensor->v.size() * sizeof(double);
    if (offset + bytes > blob.size()) raise(ErrorCode::io_failure, path + " tensor payload is short");
    std::memcpy(named[i].tensor->v.data(), blob.data() + offset, bytes);
    offset += bytes;
  }
  if (offset != blob.size()) raise(ErrorCode::io_failure, path + " has trailing payload bytes");
  return cp;
}

void write_loss_csv(const std::vector<LossPoint>& curve, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(ErrorCode::io_failure, "cannot open " + path + " for writing");
  out << "epoch,loss\n";
  for (const LossPoint& point : curve) {
    out << point.epoch << ',' << format_double(point.loss) << '\n';
  }
  if (!out.flush()) raise(ErrorCode::io_failure, "write to " + path + " failed");
}

}  // namespace intervalic::engine
