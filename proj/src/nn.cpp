#include "intervalic/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>

#include "intervalic/common.hpp"

namespace intervalic::nn {
namespace {

constexpr double kBceEps = 1e-7;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

void axpy(double* y, double a, const double* x, int n) {
  for (int k = 0; k < n; ++k) y[k] += a * x[k];
}

double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}

// y += x . W for W of shape in x out; rows of W are contiguous, so the
// product is an axpy per nonzero input entry. Inputs are mostly binary
// vectors, which makes the zero skip worthwhile.
void vecmat_add(const double* x, int in, const Tensor& w, double* y) {
  for (int k = 0; k < in; ++k) {
    double xk = x[k];
    if (xk == 0.0) continue;
    axpy(y, xk, w.row(k), w.cols());
  }
}

// dx[k] += dz . W[k,:], the transpose product.
void matt_vec_add(const double* dz, const Tensor& w, double* dx) {
  for (int k = 0; k < w.rows(); ++k) dx[k] += dot(dz, w.row(k), w.cols());
}

// dW[k,:] += x[k] * dz.
void outer_add(const double* x, int in, const double* dz, Tensor* dw) {
  for (int k = 0; k < in; ++k) {
    double xk = x[k];
    if (xk == 0.0) continue;
    axpy(dw->row(k), xk, dz, dw->cols());
  }
}

// Batched variants of the three products above. Blocking over k keeps a
// short strip of W hot in cache while every batch row is visited, so W
// streams from memory once per call instead of once per example. Per
// output element the k order stays ascending, matching the per-example
// loops term for term.
constexpr int kBatchBlock = 16;

// C[b,:] += A[b,k] * W[k,:] over all b, k.
void batch_vecmat_add(const Tensor& a, const Tensor& w, Tensor* c) {
  int rows = w.rows(), cols = w.cols(), batch = a.rows();
  for (int k0 = 0; k0 < rows; k0 += kBatchBlock) {
    int k1 = std::min(k0 + kBatchBlock, rows);
    for (int b = 0; b < batch; ++b) {
      const double* arow = a.row(b);
      double* crow = c->row(b);
      for (int k = k0; k < k1; ++k) {
        double x = arow[k];
        if (x == 0.0) continue;
        axpy(crow, x, w.row(k), cols);
      }
    }
  }
}

// dW[k,:] += sum_b X[b,k] * dZ[b,:].
void batch_outer_add(const Tensor& x, const Tensor& dz, Tensor* dw) {
  int rows = dw->rows(), cols = dw->cols(), batch = x.rows();
  for (int k0 = 0; k0 < rows; k0 += kBatchBlock) {
    int k1 = std::min(k0 + kBatchBlock, rows);
    for (int b = 0; b < batch; ++b) {
      const double* xrow = x.row(b);
      const double* dzrow = dz.row(b);
      for (int k = k0; k < k1; ++k) {
        double xk = xrow[k];
        if (xk == 0.0) continue;
        axpy(dw->row(k), xk, dzrow, cols);
      }
    }
  }
}

// dX[b,k] (+)= dZ[b,:] . W[k,:].
template <bool Assign>
void batch_matt_vec(const Tensor& dz, const Tensor& w, Tensor* dx) {
  int rows = w.rows(), cols = w.cols(), batch = dz.rows();
  for (int k0 = 0; k0 < rows; k0 += kBatchBlock) {
    int k1 = std::min(k0 + kBatchBlock, rows);
    for (int b = 0; b < batch; ++b) {
      const double* dzrow = dz.row(b);
      double* dxrow = dx->row(b);
      for (int k = k0; k < k1; ++k) {
        double s = dot(dzrow, w.row(k), cols);
        if constexpr (Assign) {
          dxrow[k] = s;
        } else {
          dxrow[k] += s;
        }
      }
    }
  }
}

uint64_t fnv1a64_bytes(const void* data, size_t size, uint64_t hash) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < size; ++i) {
    hash ^= p[i];
    hash *= 1099511628211ULL;
  }
  return hash;
}

void check_lstm_shapes(const LstmLayerParams& p, int input_dim, const char* where) {
  if (p.input_dim != input_dim || p.input_kernel.rows() != p.input_dim ||
      p.input_kernel.cols() != 4 * p.hidden || p.recurrent_kernel.rows() != p.hidden ||
      p.recurrent_kernel.cols() != 4 * p.hidden || p.bias.size() != 4 * p.hidden) {
    raise(ErrorCode::shape_mismatch, std::string(where) + ": lstm weight shapes do not match the input");
  }
}

// One cell step for one sequence: z holds the four pre-activation blocks on
// entry and the activated gates on exit. Shared by the sequential and the
// batched paths so both run the exact same arithmetic.
void lstm_cell_pointwise(double* z, const double* c_prev, double* gates, double* cell,
                         double* cell_tanh, double* hidden, int h) {
  for (int j = 0; j < h; ++j) {
    double gi = sigmoid(z[j]);
    double gf = sigmoid(z[h + j]);
    double gg = std::tanh(z[2 * h + j]);
    double go = sigmoid(z[3 * h + j]);
    gates[j] = gi;
    gates[h + j] = gf;
    gates[2 * h + j] = gg;
    gates[3 * h + j] = go;
    cell[j] = gf * (c_prev != nullptr ? c_prev[j] : 0.0) + gi * gg;
    cell_tanh[j] = std::tanh(cell[j]);
    hidden[j] = go * cell_tanh[j];
  }
}

// One cell step of reverse mode for one sequence. dh_carry and dc_carry
// arrive from the later timestep and leave updated for the earlier one;
// dh_carry must be refilled by the caller (it flows through the recurrent
// kernel), dc_carry flows through the cell line directly.
void lstm_cell_backward(const double* gates, const double* cell_tanh, const double* c_prev,
                        const double* ext, const double* dh_carry, double* dc_carry, double* dz,
                        int h) {
  for (int j = 0; j < h; ++j) {
    double gi = gates[j];
    double gf = gates[h + j];
    double gg = gates[2 * h + j];
    double go = gates[3 * h + j];
    double tc = cell_tanh[j];

    double dh = ext[j] + dh_carry[j];
    double d_out = dh * tc;
    double dc = dc_carry[j] + dh * go * (1.0 - tc * tc);
    double d_in = dc * gg;
    double d_forget = dc * (c_prev != nullptr ? c_prev[j] : 0.0);
    double d_cand = dc * gi;

    dz[j] = d_in * gi * (1.0 - gi);
    dz[h + j] = d_forget * gf * (1.0 - gf);
    dz[2 * h + j] = d_cand * (1.0 - gg * gg);
    dz[3 * h + j] = d_out * go * (1.0 - go);
    dc_carry[j] = dc * gf;
  }
}

void dense_forward(const double* x, int n, const DenseParams& d, std::vector<double>* pre,
                   std::vector<double>* act) {
  int in = d.kernel.rows();
  int out = d.kernel.cols();
  if (n != in || d.bias.size() != out) {
    raise(ErrorCode::shape_mismatch, "dense layer shapes do not match the input");
  }
  pre->assign(d.bias.v.begin(), d.bias.v.end());
  vecmat_add(x, in, d.kernel, pre->data());
  *act = *pre;
  switch (d.activation) {
    case Activation::identity:
      break;
    case Activation::relu:
      for (double& a : *act) a = a > 0.0 ? a : 0.0;
      break;
    case Activation::softmax:
      *act = softmax(*act);
      break;
    case Activation::sigmoid:
      for (double& a : *act) a = sigmoid(a);
      break;
  }
}

// Trunk and both heads from the final hidden state of the second layer.
// Shared by the sequential and the batched paths.
void trunk_heads_forward(const double* h2_last, int h2_len, const ModelParams& params,
                         std::vector<double>& t1_pre, std::vector<double>& t1_act,
                         std::vector<double>& t2_pre, std::vector<double>& t2_act,
                         std::vector<double>& melody_probs, std::vector<double>& chord_probs) {
  dense_forward(h2_last, h2_len, params.dense1, &t1_pre, &t1_act);
  dense_forward(t1_act.data(), static_cast<int>(t1_act.size()), params.dense2, &t2_pre, &t2_act);
  std::vector<double> pre;
  dense_forward(t2_act.data(), static_cast<int>(t2_act.size()), params.melody_head, &pre,
                &melody_probs);
  dense_forward(t2_act.data(), static_cast<int>(t2_act.size()), params.chord_head, &pre,
                &chord_probs);
}

// Reverse mode through both heads and the trunk; accumulates parameter
// gradients and adds the gradient w.r.t. the final hidden state of the
// second layer into d_h2_last (length lstm2, caller-zeroed).
void trunk_heads_backward(const double* h2_last, const ModelParams& params,
                          std::span<const uint8_t> target, const std::vector<double>& t1_pre,
                          const std::vector<double>& t1_act, const std::vector<double>& t2_pre,
                          const std::vector<double>& t2_act,
                          const std::vector<double>& melody_probs,
                          const std::vector<double>& chord_probs, ModelParams* grads,
                          double* d_h2_last) {
  int m = params.arch.melody_size;
  int ch = params.arch.chord_size;

  double inv_n = 1.0 / static_cast<double>(m + ch);
  auto clipped_dloss = [&](double p, uint8_t t) {
    if (p < kBceEps || p > 1.0 - kBceEps) return 0.0;
    return inv_n * (t != 0 ? -1.0 / p : 1.0 / (1.0 - p));
  };

  // Melody head: softmax feeding an elementwise loss, so the full Jacobian
  // applies: dz_j = p_j * (dp_j - sum_k dp_k p_k).
  std::vector<double> dz_m(static_cast<size_t>(m));
  double mix = 0.0;
  for (int j = 0; j < m; ++j) {
    dz_m[j] = clipped_dloss(melody_probs[j], target[j]);
    mix += dz_m[j] * melody_probs[j];
  }
  for (int j = 0; j < m; ++j) dz_m[j] = melody_probs[j] * (dz_m[j] - mix);

  std::vector<double> dz_c(static_cast<size_t>(ch));
  for (int j = 0; j < ch; ++j) {
    double p = chord_probs[j];
    dz_c[j] = clipped_dloss(p, target[static_cast<size_t>(m) + j]) * p * (1.0 - p);
  }

  int d2 = params.arch.dense2;
  std::vector<double> d_act2(static_cast<size_t>(d2), 0.0);
  outer_add(t2_act.data(), d2, dz_m.data(), &grads->melody_head.kernel);
  axpy(grads->melody_head.bias.v.data(), 1.0, dz_m.data(), m);
  matt_vec_add(dz_m.data(), params.melody_head.kernel, d_act2.data());
  outer_add(t2_act.data(), d2, dz_c.data(), &grads->chord_head.kernel);
  axpy(grads->chord_head.bias.v.data(), 1.0, dz_c.data(), ch);
  matt_vec_add(dz_c.data(), params.chord_head.kernel, d_act2.data());

  std::vector<double> dz2(static_cast<size_t>(d2));
  for (int j = 0; j < d2; ++j) dz2[j] = t2_pre[j] > 0.0 ? d_act2[j] : 0.0;

  int d1 = params.arch.dense1;
  std::vector<double> d_act1(static_cast<size_t>(d1), 0.0);
  outer_add(t1_act.data(), d1, dz2.data(), &grads->dense2.kernel);
  axpy(grads->dense2.bias.v.data(), 1.0, dz2.data(), d2);
  matt_vec_add(dz2.data(), params.dense2.kernel, d_act1.data());

  std::vector<double> dz1(static_cast<size_t>(d1));
  for (int j = 0; j < d1; ++j) dz1[j] = t1_pre[j] > 0.0 ? d_act1[j] : 0.0;

  outer_add(h2_last, params.arch.lstm2, dz1.data(), &grads->dense1.kernel);
  axpy(grads->dense1.bias.v.data(), 1.0, dz1.data(), d1);
  matt_vec_add(dz1.data(), params.dense1.kernel, d_h2_last);
}

Tensor lstm_run(const Tensor& seq, const LstmLayerParams& p, LstmCache& cache) {
  check_lstm_shapes(p, seq.cols(), "lstm_forward");
  int t_count = seq.rows();
  int h = p.hidden;
  int h4 = 4 * h;

  cache.input = seq;
  cache.gates = Tensor::zeros({t_count, h4});
  cache.cell = Tensor::zeros({t_count, h});
  cache.cell_tanh = Tensor::zeros({t_count, h});
  cache.hidden = Tensor::zeros({t_count, h});

  std::vector<double> z(static_cast<size_t>(h4));
  std::vector<double> h_prev(static_cast<size_t>(h), 0.0);
  std::vector<double> c_prev(static_cast<size_t>(h), 0.0);

  for (int t = 0; t < t_count; ++t) {
    std::copy(p.bias.v.begin(), p.bias.v.end(), z.begin());
    vecmat_add(seq.row(t), seq.cols(), p.input_kernel, z.data());
    vecmat_add(h_prev.data(), h, p.recurrent_kernel, z.data());

    double* cell = cache.cell.row(t);
    double* hidden = cache.hidden.row(t);
    lstm_cell_pointwise(z.data(), t > 0 ? c_prev.data() : nullptr, cache.gates.row(t), cell,
                        cache.cell_tanh.row(t), hidden, h);
    std::copy(hidden, hidden + h, h_prev.begin());
    std::copy(cell, cell + h, c_prev.begin());
  }
  return cache.hidden;
}

// Reverse-mode pass over one layer. dh_ext carries the external gradient
// arriving at each hidden state; dx, when requested, receives the gradient
// with respect to the layer input so it can feed the layer below.
void lstm_backward(const LstmCache& cache, const LstmLayerParams& p, const Tensor& dh_ext,
                   LstmLayerParams* g, Tensor* dx) {
  int t_count = cache.hidden.rows();
  int h = p.hidden;
  int h4 = 4 * h;
  int in = p.input_dim;

  if (dx != nullptr) *dx = Tensor::zeros({t_count, in});
  std::vector<double> dz(static_cast<size_t>(h4));
  std::vector<double> dh_next(static_cast<size_t>(h), 0.0);
  std::vector<double> dc_next(static_cast<size_t>(h), 0.0);

  for (int t = t_count - 1; t >= 0; --t) {
    lstm_cell_backward(cache.gates.row(t), cache.cell_tanh.row(t),
                       t > 0 ? cache.cell.row(t - 1) : nullptr, dh_ext.row(t), dh_next.data(),
                       dc_next.data(), dz.data(), h);

    axpy(g->bias.v.data(), 1.0, dz.data(), h4);
    outer_add(cache.input.row(t), in, dz.data(), &g->input_kernel);
    if (t > 0) outer_add(cache.hidden.row(t - 1), h, dz.data(), &g->recurrent_kernel);

    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    matt_vec_add(dz.data(), p.recurrent_kernel, dh_next.data());
    if (dx != nullptr) matt_vec_add(dz.data(), p.input_kernel, dx->row(t));
  }
}

void fill_uniform(Tensor* t, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& x : t->v) x = dist(rng);
}

double glorot_limit(int fan_in, int fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); }

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  t.shape = std::move(shape);
  size_t n = 1;
  for (int d : t.shape) n *= static_cast<size_t>(d);
  t.v.assign(t.shape.empty() ? 0 : n, 0.0);
  return t;
}

std::vector<ModelParams::Named> ModelParams::tensors() {
  return {
      {"lstm1.input_kernel", &lstm1.input_kernel},
      {"lstm1.recurrent_kernel", &lstm1.recurrent_kernel},
      {"lstm1.bias", &lstm1.bias},
      {"lstm2.input_kernel", &lstm2.input_kernel},
      {"lstm2.recurrent_kernel", &lstm2.recurrent_kernel},
      {"lstm2.bias", &lstm2.bias},
      {"dense1.kernel", &dense1.kernel},
      {"dense1.bias", &dense1.bias},
      {"dense2.kernel", &dense2.kernel},
      {"dense2.bias", &dense2.bias},
      {"melody_head.kernel", &melody_head.kernel},
      {"melody_head.bias", &melody_head.bias},
      {"chord_head.kernel", &chord_head.kernel},
      {"chord_head.bias", &chord_head.bias},
  };
}

std::vector<ModelParams::ConstNamed> ModelParams::tensors() const {
  std::vector<ConstNamed> out;
  auto mutable_list = const_cast<ModelParams*>(this)->tensors();
  out.reserve(mutable_list.size());
  for (const auto& [name, tensor] : mutable_list) out.push_back({name, tensor});
  return out;
}

ModelParams zero_params(const Architecture& arch) {
  ModelParams p;
  p.arch = arch;

  p.lstm1.input_dim = arch.features();
  p.lstm1.hidden = arch.lstm1;
  p.lstm1.input_kernel = Tensor::zeros({arch.features(), 4 * arch.lstm1});
  p.lstm1.recurrent_kernel = Tensor::zeros({arch.lstm1, 4 * arch.lstm1});
  p.lstm1.bias = Tensor::zeros({4 * arch.lstm1});

  p.lstm2.input_dim = arch.lstm1;
  p.lstm2.hidden = arch.lstm2;
  p.lstm2.input_kernel = Tensor::zeros({arch.lstm1, 4 * arch.lstm2});
  p.lstm2.recurrent_kernel = Tensor::zeros({arch.lstm2, 4 * arch.lstm2});
  p.lstm2.bias = Tensor::zeros({4 * arch.lstm2});

  p.dense1 = {Tensor::zeros({arch.lstm2, arch.dense1}), Tensor::zeros({arch.dense1}), Activation::relu};
  p.dense2 = {Tensor::zeros({arch.dense1, arch.dense2}), Tensor::zeros({arch.dense2}), Activation::relu};
  p.melody_head = {Tensor::zeros({arch.dense2, arch.melody_size}), Tensor::zeros({arch.melody_size}),
                   Activation::softmax};
  p.chord_head = {Tensor::zeros({arch.dense2, arch.chord_size}), Tensor::zeros({arch.chord_size}),
                  Activation::sigmoid};
  return p;
}

ModelParams init_params(uint64_t seed, const Architecture& arch) {
  ModelParams p = zero_params(arch);
  std::mt19937_64 rng(seed);

  fill_uniform(&p.lstm1.input_kernel, glorot_limit(p.lstm1.input_dim, 4 * p.lstm1.hidden), rng);
  fill_uniform(&p.lstm1.recurrent_kernel, glorot_limit(p.lstm1.hidden, 4 * p.lstm1.hidden), rng);
  fill_uniform(&p.lstm2.input_kernel, glorot_limit(p.lstm2.input_dim, 4 * p.lstm2.hidden), rng);
  fill_uniform(&p.lstm2.recurrent_kernel, glorot_limit(p.lstm2.hidden, 4 * p.lstm2.hidden), rng);
  fill_uniform(&p.dense1.kernel, glorot_limit(p.dense1.kernel.rows(), p.dense1.kernel.cols()), rng);
  fill_uniform(&p.dense2.kernel, glorot_limit(p.dense2.kernel.rows(), p.dense2.kernel.cols()), rng);
  fill_uniform(&p.melody_head.kernel, glorot_limit(p.melody_head.kernel.rows(), p.melody_head.kernel.cols()), rng);
  fill_uniform(&p.chord_head.kernel, glorot_limit(p.chord_head.kernel.rows(), p.chord_head.kernel.cols()), rng);

  // Forget gates start open so early gradients reach across the window.
  for (int j = 0; j < p.lstm1.hidden; ++j) p.lstm1.bias.v[p.lstm1.hidden + j] = 1.0;
  for (int j = 0; j < p.lstm2.hidden; ++j) p.lstm2.bias.v[p.lstm2.hidden + j] = 1.0;
  return p;
}

bool all_finite(const ModelParams& params) {
  for (const auto& [name, tensor] : params.tensors()) {
    for (double x : tensor->v) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

Tensor lstm_forward(const Tensor& seq, const LstmLayerParams& params, LstmCache* cache) {
  LstmCache local;
  return lstm_run(seq, params, cache != nullptr ? *cache : local);
}

std::vector<double> ModelOutput::concat() const {
  std::vector<double> out;
  out.reserve(melody_probs.size() + chord_probs.size());
  out.insert(out.end(), melody_probs.begin(), melody_probs.end());
  out.insert(out.end(), chord_probs.begin(), chord_probs.end());
  return out;
}

ModelOutput model_forward(const Tensor& input, const ModelParams& params, ForwardCache* cache) {
  if (input.rows() < 1) raise(ErrorCode::shape_mismatch, "model_forward: empty input sequence");
  if (input.cols() != params.arch.features()) {
    raise(ErrorCode::shape_mismatch, "model_forward: input width " + std::to_string(input.cols()) +
                                         " does not match feature size " +
                                         std::to_string(params.arch.features()));
  }

  ForwardCache local;
  ForwardCache& c = cache != nullptr ? *cache : local;
  c.params_revision = params.revision;

  Tensor h1 = lstm_run(input, params.lstm1, c.l1);
  Tensor h2 = lstm_run(h1, params.lstm2, c.l2);

  trunk_heads_forward(h2.row(h2.rows() - 1), h2.cols(), params, c.trunk1_pre, c.trunk1_act,
                      c.trunk2_pre, c.trunk2_act, c.melody_probs, c.chord_probs);
  ModelOutput out;
  out.melody_probs = c.melody_probs;
  out.chord_probs = c.chord_probs;
  return out;
}

double bce_loss(std::span<const double> pred, std::span<const uint8_t> target) {
  if (pred.empty() || pred.size() != target.size()) {
    raise(ErrorCode::shape_mismatch, "bce_loss: prediction and target lengths differ");
  }
  double total = 0.0;
  for (size_t k = 0; k < pred.size(); ++k) {
    double p = std::clamp(pred[k], kBceEps, 1.0 - kBceEps);
    total += target[k] != 0 ? -std::log(p) : -std::log(1.0 - p);
  }
  return total / static_cast<double>(pred.size());
}

void model_backward(const ForwardCache& cache, const ModelParams& params,
                    std::span<const uint8_t> target, ModelParams* grads) {
  if (cache.params_revision != params.revision) {
    raise(ErrorCode::stale_cache, "model_backward: cache was built against different parameter values");
  }
  int m = params.arch.melody_size;
  int ch = params.arch.chord_size;
  if (static_cast<int>(target.size()) != m + ch) {
    raise(ErrorCode::shape_mismatch, "model_backward: target length does not match feature size");
  }

  int t_count = cache.l2.hidden.rows();
  int h2 = params.arch.lstm2;
  std::vector<double> d_h2_last(static_cast<size_t>(h2), 0.0);
  trunk_heads_backward(cache.l2.hidden.row(t_count - 1), params, target, cache.trunk1_pre,
                       cache.trunk1_act, cache.trunk2_pre, cache.trunk2_act, cache.melody_probs,
                       cache.chord_probs, grads, d_h2_last.data());

  // Only the final hidden state of the second layer feeds the trunk; every
  // hidden state of the first layer feeds the second.
  Tensor dh2_ext = Tensor::zeros({t_count, h2});
  std::copy(d_h2_last.begin(), d_h2_last.end(), dh2_ext.row(t_count - 1));
  Tensor dx2;
  lstm_backward(cache.l2, params.lstm2, dh2_ext, &grads->lstm2, &dx2);
  lstm_backward(cache.l1, params.lstm1, dx2, &grads->lstm1, nullptr);
}

double batch_forward_backward(const std::vector<Tensor>& inputs,
                              std::span<const std::vector<uint8_t>> targets,
                              const ModelParams& params, ModelParams* grads, BatchCache* cache) {
  int batch = static_cast<int>(inputs.size());
  if (batch == 0 || targets.size() != inputs.size()) {
    raise(ErrorCode::shape_mismatch,
          "batch_forward_backward: example and target counts differ or batch is empty");
  }
  int window = inputs[0].rows();
  int features = params.arch.features();
  if (window < 1) raise(ErrorCode::shape_mismatch, "batch_forward_backward: empty input sequence");
  uint64_t signature = 1469598103934665603ULL;
  for (const Tensor& in : inputs) {
    if (in.rows() != window || in.cols() != features) {
      raise(ErrorCode::shape_mismatch,
            "batch_forward_backward: every window must be the same shape, " +
                std::to_string(window) + " x " + std::to_string(features));
    }
    signature = fnv1a64_bytes(in.v.data(), in.v.size() * sizeof(double), signature);
  }
  for (const std::vector<uint8_t>& target : targets) {
    if (static_cast<int>(target.size()) != features) {
      raise(ErrorCode::shape_mismatch,
            "batch_forward_backward: target length does not match feature size");
    }
  }
  check_lstm_shapes(params.lstm1, features, "batch_forward_backward");
  check_lstm_shapes(params.lstm2, params.arch.lstm1, "batch_forward_backward");

  int h1n = params.arch.lstm1;
  int h2n = params.arch.lstm2;

  if (cache->batch != batch || cache->window != window || cache->input_signature != signature ||
      cache->g1.empty() || cache->g1[0].cols() != 4 * h1n || cache->g2[0].cols() != 4 * h2n) {
    cache->batch = batch;
    cache->window = window;
    cache->input_signature = signature;
    cache->g1.assign(window, Tensor::zeros({batch, 4 * h1n}));
    cache->c1.assign(window, Tensor::zeros({batch, h1n}));
    cache->ct1.assign(window, Tensor::zeros({batch, h1n}));
    cache->h1.assign(window, Tensor::zeros({batch, h1n}));
    cache->g2.assign(window, Tensor::zeros({batch, 4 * h2n}));
    cache->c2.assign(window, Tensor::zeros({batch, h2n}));
    cache->ct2.assign(window, Tensor::zeros({batch, h2n}));
    cache->h2.assign(window, Tensor::zeros({batch, h2n}));
    cache->dx1.assign(window, Tensor::zeros({batch, h1n}));
    cache->trunk.assign(batch, {});
    cache->input_nz.assign(window, {});
    for (int t = 0; t < window; ++t) {
      for (int b = 0; b < batch; ++b) {
        const double* row = inputs[b].row(t);
        for (int k = 0; k < features; ++k) {
          if (row[k] != 0.0) cache->input_nz[t].push_back({b, k, row[k]});
        }
      }
    }
  }

  // Forward. Within each output row the contributions arrive in the same
  // order the per-example path uses: bias, input entries by ascending
  // feature, recurrent entries by ascending unit.
  for (int t = 0; t < window; ++t) {
    Tensor& z1 = cache->g1[t];
    for (int b = 0; b < batch; ++b) {
      std::copy(params.lstm1.bias.v.begin(), params.lstm1.bias.v.end(), z1.row(b));
    }
    for (const BatchCache::InputEntry& e : cache->input_nz[t]) {
      axpy(z1.row(e.example), e.value, params.lstm1.input_kernel.row(e.feature), 4 * h1n);
    }
    if (t > 0) batch_vecmat_add(cache->h1[t - 1], params.lstm1.recurrent_kernel, &z1);
    for (int b = 0; b < batch; ++b) {
      // In place: each j reads its four z slots before writing them back.
      lstm_cell_pointwise(z1.row(b), t > 0 ? cache->c1[t - 1].row(b) : nullptr, z1.row(b),
                          cache->c1[t].row(b), cache->ct1[t].row(b), cache->h1[t].row(b), h1n);
    }

    Tensor& z2 = cache->g2[t];
    for (int b = 0; b < batch; ++b) {
      std::copy(params.lstm2.bias.v.begin(), params.lstm2.bias.v.end(), z2.row(b));
    }
    batch_vecmat_add(cache->h1[t], params.lstm2.input_kernel, &z2);
    if (t > 0) batch_vecmat_add(cache->h2[t - 1], params.lstm2.recurrent_kernel, &z2);
    for (int b = 0; b < batch; ++b) {
      lstm_cell_pointwise(z2.row(b), t > 0 ? cache->c2[t - 1].row(b) : nullptr, z2.row(b),
                          cache->c2[t].row(b), cache->ct2[t].row(b), cache->h2[t].row(b), h2n);
    }
  }

  const Tensor& h2_last = cache->h2[window - 1];
  double total_loss = 0.0;
  std::vector<double> concat;
  for (int b = 0; b < batch; ++b) {
    BatchTrunk& tr = cache->trunk[b];
    trunk_heads_forward(h2_last.row(b), h2n, params, tr.t1_pre, tr.t1_act, tr.t2_pre, tr.t2_act,
                        tr.melody_probs, tr.chord_probs);
    concat.assign(tr.melody_probs.begin(), tr.melody_probs.end());
    concat.insert(concat.end(), tr.chord_probs.begin(), tr.chord_probs.end());
    total_loss += bce_loss(concat, targets[b]);
  }

  // Reverse. Weight gradients accumulate timestep-major here where the
  // per-example path finishes one example before starting the next; the
  // sums agree up to rounding.
  Tensor dh2_last = Tensor::zeros({batch, h2n});
  for (int b = 0; b < batch; ++b) {
    const BatchTrunk& tr = cache->trunk[b];
    trunk_heads_backward(h2_last.row(b), params, targets[b], tr.t1_pre, tr.t1_act, tr.t2_pre,
                         tr.t2_act, tr.melody_probs, tr.chord_probs, grads, dh2_last.row(b));
  }

  std::vector<double> zero_ext(static_cast<size_t>(std::max(h1n, h2n)), 0.0);
  Tensor dz2 = Tensor::zeros({batch, 4 * h2n});
  Tensor dh_next2 = Tensor::zeros({batch, h2n});
  Tensor dc_next2 = Tensor::zeros({batch, h2n});
  for (int t = window - 1; t >= 0; --t) {
    for (int b = 0; b < batch; ++b) {
      const double* ext = t == window - 1 ? dh2_last.row(b) : zero_ext.data();
      lstm_cell_backward(cache->g2[t].row(b), cache->ct2[t].row(b),
                         t > 0 ? cache->c2[t - 1].row(b) : nullptr, ext, dh_next2.row(b),
                         dc_next2.row(b), dz2.row(b), h2n);
    }
    for (int b = 0; b < batch; ++b) axpy(grads->lstm2.bias.v.data(), 1.0, dz2.row(b), 4 * h2n);
    batch_outer_add(cache->h1[t], dz2, &grads->lstm2.input_kernel);
    if (t > 0) batch_outer_add(cache->h2[t - 1], dz2, &grads->lstm2.recurrent_kernel);
    std::fill(dh_next2.v.begin(), dh_next2.v.end(), 0.0);
    batch_matt_vec<false>(dz2, params.lstm2.recurrent_kernel, &dh_next2);
    batch_matt_vec<true>(dz2, params.lstm2.input_kernel, &cache->dx1[t]);
  }

  Tensor dz1 = Tensor::zeros({batch, 4 * h1n});
  Tensor dh_next1 = Tensor::zeros({batch, h1n});
  Tensor dc_next1 = Tensor::zeros({batch, h1n});
  for (int t = window - 1; t >= 0; --t) {
    for (int b = 0; b < batch; ++b) {
      lstm_cell_backward(cache->g1[t].row(b), cache->ct1[t].row(b),
                         t > 0 ? cache->c1[t - 1].row(b) : nullptr, cache->dx1[t].row(b),
                         dh_next1.row(b), dc_next1.row(b), dz1.row(b), h1n);
    }
    for (int b = 0; b < batch; ++b) axpy(grads->lstm1.bias.v.data(), 1.0, dz1.row(b), 4 * h1n);
    for (const BatchCache::InputEntry& e : cache->input_nz[t]) {
      axpy(grads->lstm1.input_kernel.row(e.feature), e.value, dz1.row(e.example), 4 * h1n);
    }
    if (t > 0) batch_outer_add(cache->h1[t - 1], dz1, &grads->lstm1.recurrent_kernel);
    std::fill(dh_next1.v.begin(), dh_next1.v.end(), 0.0);
    batch_matt_vec<false>(dz1, params.lstm1.recurrent_kernel, &dh_next1);
  }

  return total_loss;
}

AdamState AdamState::init(const ModelParams& params, double lr, double beta1, double beta2,
                          double epsilon) {
  AdamState s;
  s.lr = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  for (const auto& [name, tensor] : params.tensors()) {
    s.first_moment.push_back(Tensor::zeros(tensor->shape));
    s.second_moment.push_back(Tensor::zeros(tensor->shape));
  }
  return s;
}

void adam_step(ModelParams* params, const ModelParams& grads, AdamState* state) {
  auto theta = params->tensors();
  auto g = grads.tensors();
  if (theta.size() != g.size() || theta.size() != state->first_moment.size()) {
    raise(ErrorCode::shape_mismatch, "adam_step: parameter, gradient, and state tensor counts differ");
  }

  state->step_count += 1;
  double bc1 = 1.0 - std::pow(state->beta1, static_cast<double>(state->step_count));
  double bc2 = 1.0 - std::pow(state->beta2, static_cast<double>(state->step_count));

  for (size_t i = 0; i < theta.size(); ++i) {
    Tensor& t = *theta[i].tensor;
    const Tensor& grad = *g[i].tensor;
    Tensor& m = state->first_moment[i];
    Tensor& v = state->second_moment[i];
    if (grad.shape != t.shape || m.shape != t.shape) {
      raise(ErrorCode::shape_mismatch, "adam_step: tensor " + theta[i].name + " has mismatched shape");
    }
    for (size_t k = 0; k < t.v.size(); ++k) {
      double gk = grad.v[k];
      m.v[k] = state->beta1 * m.v[k] + (1.0 - state->beta1) * gk;
      v.v[k] = state->beta2 * v.v[k] + (1.0 - state->beta2) * gk * gk;
      double m_hat = m.v[k] / bc1;
      double v_hat = v.v[k] / bc2;
      t.v[k] -= state->lr * m_hat / (std::sqrt(v_hat) + state->epsilon);
    }
  }
  params->revision += 1;
}

double grad_check(ModelParams* params, const Tensor& input, std::span<const uint8_t> target,
                  double step) {
  ModelParams grads = zero_params(params->arch);
  ForwardCache cache;
  model_forward(input, *params, &cache);
  model_backward(cache, *params, target, &grads);

  auto loss_at = [&]() {
    ModelOutput out = model_forward(input, *params);
    auto probs = out.concat();
    return bce_loss(probs, target);
  };

  double worst = 0.0;
  auto theta = params->tensors();
  auto g = grads.tensors();
  for (size_t i = 0; i < theta.size(); ++i) {
    Tensor& t = *theta[i].tensor;
    for (size_t k = 0; k < t.v.size(); ++k) {
      double orig = t.v[k];
      t.v[k] = orig + step;
      double up = loss_at();
      t.v[k] = orig - step;
      double down = loss_at();
      t.v[k] = orig;
      double numeric = (up - down) / (2.0 * step);
      double analytic = g[i].tensor->v[k];
      double rel = std::abs(analytic - numeric) /
                   std::max({std::abs(analytic), std::abs(numeric), 1e-12});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

std::vector<double> softmax(std::vector<double> z) {
  if (z.empty()) raise(ErrorCode::shape_mismatch, "softmax: empty input");
  double m = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double& x : z) {
    x = std::exp(x - m);
    total += x;
  }
  for (double& x : z) x /= total;
  return z;
}

}  // namespace intervalic::nn
