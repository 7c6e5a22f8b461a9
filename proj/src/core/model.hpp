#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace gapkit {

enum class LayerKind : int {
  conv2d = 0,
  dense = 1,
  relu = 2,
  maxpool = 3,
  globalavgpool = 4,
  dropout = 5,
  flatten = 6,
  softmax = 7,
};

enum class Padding : int { valid = 0, same = 1 };

const char* layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);
const char* padding_name(Padding p);
Padding padding_from_name(const std::string& name);

// One layer of the fixed vocabulary. Data layout is NHWC; conv weights are
// (kh, kw, in_channels, out_channels), dense weights are (in, out).
struct LayerSpec {
  LayerKind kind = LayerKind::relu;

  // conv2d
  int kernel_h = 0, kernel_w = 0;
  int in_channels = 0, out_channels = 0;
  int stride = 1;
  Padding padding = Padding::valid;

  // dense
  int in_features = 0, out_features = 0;

  // maxpool (shares stride/padding fields)
  int pool_h = 0, pool_w = 0;

  // dropout
  float drop_rate = 0.0f;

  Tensor weight;
  Tensor bias;  // empty when the layer has no bias

  bool parameterized() const {
    return kind == LayerKind::conv2d || kind == LayerKind::dense;
  }
};

LayerSpec make_conv2d(int kh, int kw, int in_ch, int out_ch, int stride,
                      Padding padding, bool with_bias = true);
LayerSpec make_dense(int in, int out, bool with_bias = true);
LayerSpec make_relu();
LayerSpec make_maxpool(int ph, int pw, int stride, Padding padding = Padding::valid);
LayerSpec make_globalavgpool();
LayerSpec make_dropout(float rate);
LayerSpec make_flatten();
LayerSpec make_softmax();

struct ModelSpec {
  std::vector<LayerSpec> layers;
  std::vector<int64_t> input_shape;  // per-sample, e.g. {H, W, C}
  int num_classes = 0;

  int depth() const;  // number of parameterized layers

  // Per-sample output shape of trace index k (0 = input, i = output of
  // layers[i-1]). Validates that consecutive layer shapes compose.
  std::vector<int64_t> shape_at(int k) const;

  // Trace index of the logits: output of the last non-softmax layer.
  int logits_index() const;

  void validate() const;
};

// Activation capture: trace index 0 is the input batch, index i the output
// of layers[i-1], each with leading batch extent.
struct ActivationTrace {
  std::map<int, Tensor> activations;

  bool has(int k) const { return activations.count(k) != 0; }
  const Tensor& at(int k) const;
};

enum class Mode { eval = 0, train = 1 };

struct ForwardResult {
  Tensor logits;  // (batch, num_classes), pre-softmax
  ActivationTrace trace;
};

// Runs the network on a batch. Dropout is active only in train mode, keyed
// by (dropout_seed, layer, element) so eval-mode calls are deterministic.
ForwardResult forward(const ModelSpec& model, const Tensor& inputs,
                      const std::set<int>& capture = {}, Mode mode = Mode::eval,
                      uint64_t dropout_seed = 0);

// Resumes the forward pass from activations at trace index k (eval mode).
// Splices exactly: forward_from(m, k, forward(m, x).trace.at(k)) equals
// forward(m, x).logits bit for bit.
Tensor forward_from(const ModelSpec& model, int k, const Tensor& activations);

// Per-sample gradient of logits[:, pair.first] - logits[:, pair.second]
// with respect to the layer-k activations (eval mode). `pairs` holds one
// (i, j) class pair per sample.
Tensor logit_diff_grads(const ModelSpec& model, int k, const Tensor& activations,
                        const std::vector<std::pair<int, int>>& pairs);

// Single-pair convenience wrapper: head is logits[i] - logits[j] for every
// sample.
Tensor grad_wrt_activation(const ModelSpec& model, int k,
                           const Tensor& activations, int class_i, int class_j);

struct LayerGrads {
  Tensor weight;
  Tensor bias;
};

// Mean cross-entropy gradients over the batch, train mode (dropout keyed by
// dropout_seed). Returns one LayerGrads per layer (empty tensors for
// non-parameterized layers). Optionally reports logits and the loss value.
std::vector<LayerGrads> grad_wrt_weights(const ModelSpec& model,
                                         const Tensor& inputs,
                                         const std::vector<int32_t>& labels,
                                         uint64_t dropout_seed = 0,
                                         Tensor* out_logits = nullptr,
                                         double* out_loss = nullptr);

// Largest singular value by power iteration. Conv kernels are reshaped to
// (kh*kw*in, out); dense weights used as-is. All-zero input returns 0.
double spectral_norm(const Tensor& weight);

double frobenius_norm(const Tensor& weight);

Tensor softmax_rows(const Tensor& logits);

// Mean categorical cross-entropy of softmax(logits) against labels.
double cross_entropy(const Tensor& logits, const std::vector<int32_t>& labels);

}  // namespace gapkit
