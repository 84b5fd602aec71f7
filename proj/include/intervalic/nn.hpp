#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace intervalic::nn {

/// Row-major tensor of 64-bit floats, 1-d (bias) or 2-d (kernel).
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  static Tensor zeros(std::vector<int> shape);

  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() > 1 ? shape[1] : 1; }
  int64_t size() const { return static_cast<int64_t>(v.size()); }
  double* row(int r) { return v.data() + static_cast<size_t>(r) * cols(); }
  const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols(); }
  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols() + c]; }

  bool operator==(const Tensor&) const = default;
};

/// LSTM layer weights. The 4*hidden axis is blocked by gate in the fixed
/// order input, forget, candidate, output; keep that order when exchanging
/// checkpoints.
struct LstmLayerParams {
  Tensor input_kernel;      // input_dim x 4*hidden
  Tensor recurrent_kernel;  // hidden x 4*hidden
  Tensor bias;              // 4*hidden
  int input_dim = 0;
  int hidden = 0;

  bool operator==(const LstmLayerParams&) const = default;
};

enum class Activation { identity, relu, softmax, sigmoid };

struct DenseParams {
  Tensor kernel;  // in x out
  Tensor bias;    // out
  Activation activation = Activation::identity;

  bool operator==(const DenseParams&) const = default;
};

struct Architecture {
  int melody_size = 23;
  int chord_size = 64;
  int lstm1 = 300;
  int lstm2 = 200;
  int dense1 = 200;
  int dense2 = 100;

  int features() const { return melody_size + chord_size; }
  bool operator==(const Architecture&) const = default;
};

struct ModelParams {
  Architecture arch;
  LstmLayerParams lstm1, lstm2;
  DenseParams dense1, dense2;
  DenseParams melody_head;  // softmax over melody_size slots
  DenseParams chord_head;   // sigmoid over chord_size slots

  // Bumped by adam_step so stale forward caches are detectable.
  int64_t revision = 0;

  struct Named {
    std::string name;
    Tensor* tensor;
  };
  struct ConstNamed {
    std::string name;
    const Tensor* tensor;
  };
  std::vector<Named> tensors();
  std::vector<ConstNamed> tensors() const;
};

/// All-zero parameters with the right shapes; also the gradient container.
ModelParams zero_params(const Architecture& arch);

/// Glorot-uniform kernels, scaled-uniform recurrent kernels, zero biases
/// except the LSTM forget-gate block which starts at 1.
ModelParams init_params(uint64_t seed, const Architecture& arch);

bool all_finite(const ModelParams& params);

struct LstmCache {
  Tensor input;      // T x input_dim
  Tensor gates;      // T x 4*hidden, post-activation, gate order i,f,g,o
  Tensor cell;       // T x hidden
  Tensor cell_tanh;  // T x hidden
  Tensor hidden;     // T x hidden
};

struct ForwardCache {
  int64_t params_revision = -1;
  LstmCache l1, l2;
  std::vector<double> trunk1_pre, trunk1_act;
  std::vector<double> trunk2_pre, trunk2_act;
  std::vector<double> melody_probs, chord_probs;
};

/// Runs one LSTM layer over a full sequence from zero initial state and
/// returns all T hidden states. The cache keeps what backward needs.
Tensor lstm_forward(const Tensor& seq, const LstmLayerParams& params, LstmCache* cache = nullptr);

struct ModelOutput {
  std::vector<double> melody_probs;
  std::vector<double> chord_probs;

  std::vector<double> concat() const;
};

/// Full forward pass: stacked LSTM over the whole window, the final hidden
/// state of the second layer through the relu trunk, then the two heads.
ModelOutput model_forward(const Tensor& input, const ModelParams& params, ForwardCache* cache = nullptr);

/// Mean elementwise binary cross-entropy with predictions clipped into
/// [1e-7, 1 - 1e-7] before the logarithms.
double bce_loss(std::span<const double> pred, std::span<const uint8_t> target);

/// Exact reverse-mode gradients of bce_loss(model_forward(...), target),
/// including backpropagation through time across both stacked layers.
/// Accumulates into grads, so zero it (or keep accumulating for a batch).
void model_backward(const ForwardCache& cache, const ModelParams& params,
                    std::span<const uint8_t> target, ModelParams* grads);

struct BatchTrunk {
  std::vector<double> t1_pre, t1_act, t2_pre, t2_act, melody_probs, chord_probs;
};

/// Scratch for batch_forward_backward: whole-batch activations per timestep
/// plus the packed nonzero input entries. Rebuilt automatically when the
/// batch shape or input content changes.
struct BatchCache {
  int batch = 0;
  int window = 0;
  uint64_t input_signature = 0;
  std::vector<Tensor> g1, c1, ct1, h1;  // [window], rows are examples
  std::vector<Tensor> g2, c2, ct2, h2;
  std::vector<Tensor> dx1;              // gradient arriving at layer-1 outputs
  std::vector<BatchTrunk> trunk;        // [batch]
  struct InputEntry {
    int example = 0;
    int feature = 0;
    double value = 0.0;
  };
  std::vector<std::vector<InputEntry>> input_nz;  // [window]
};

/// Forward and reverse over a batch of equally long windows in one sweep.
/// Returns the summed bce_loss over the batch and accumulates the summed
/// gradients into *grads (zero it first, or keep accumulating). The math
/// matches looping model_forward/model_backward per example entry for
/// entry; the batched loops stream each weight matrix once per timestep
/// instead of once per example, which keeps full-batch training tractable
/// on one core. Weight gradients reduce in timestep-major order, so their
/// low bits can differ from the per-example loop.
double batch_forward_backward(const std::vector<Tensor>& inputs,
                              std::span<const std::vector<uint8_t>> targets,
                              const ModelParams& params, ModelParams* grads, BatchCache* cache);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int64_t step_count = 0;
  std::vector<Tensor> first_moment;   // aligned with ModelParams::tensors()
  std::vector<Tensor> second_moment;

  static AdamState init(const ModelParams& params, double lr = 1e-3, double beta1 = 0.9,
                        double beta2 = 0.999, double epsilon = 1e-8);
};

/// Bias-corrected Adam update; increments params.revision.
void adam_step(ModelParams* params, const ModelParams& grads, AdamState* state);

/// Compares every analytic gradient entry against central finite
/// differences of the loss and returns the maximum relative error, with
/// denominator max(|analytic|, |numeric|, 1e-12).
double grad_check(ModelParams* params, const Tensor& input, std::span<const uint8_t> target, double step);

std::vector<double> softmax(std::vector<double> z);

}  // namespace intervalic::nn
