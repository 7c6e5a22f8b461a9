#include "core/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "core/error.hpp"
#include "core/linalg.hpp"
#include "core/rng.hpp"

namespace gapkit {

namespace {

const char* kKindNames[] = {"conv2d", "dense",   "relu",    "maxpool",
                            "globalavgpool", "dropout", "flatten", "softmax"};

struct ConvGeom {
  int out_h = 0, out_w = 0;
  int pad_top = 0, pad_left = 0;
};

ConvGeom conv_geometry(int h, int w, int kh, int kw, int stride, Padding padding,
                       int layer, const char* what) {
  ConvGeom g;
  if (stride < 1) fail(ErrorCode::invalid_argument, std::string(what) + ": stride < 1");
  if (padding == Padding::same) {
    g.out_h = (h + stride - 1) / stride;
    g.out_w = (w + stride - 1) / stride;
    int pad_h = std::max(0, (g.out_h - 1) * stride + kh - h);
    int pad_w = std::max(0, (g.out_w - 1) * stride + kw - w);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  } else {
    if (h < kh || w < kw)
      fail(ErrorCode::shape_mismatch,
           "layer " + std::to_string(layer) + " (" + what + "): window " +
               std::to_string(kh) + "x" + std::to_string(kw) +
               " larger than input " + std::to_string(h) + "x" + std::to_string(w));
    g.out_h = (h - kh) / stride + 1;
    g.out_w = (w - kw) / stride + 1;
  }
  return g;
}

void im2col(const float* x, int h, int w, int c, int kh, int kw, int stride,
            const ConvGeom& g, float* cols) {
  const int cols_k = kh * kw * c;
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      float* row = cols + (int64_t(oy) * g.out_w + ox) * cols_k;
      for (int ky = 0; ky < kh; ++ky) {
        int iy = oy * stride + ky - g.pad_top;
        for (int kx = 0; kx < kw; ++kx) {
          int ix = ox * stride + kx - g.pad_left;
          float* dst = row + (ky * kw + kx) * c;
          if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
            std::memset(dst, 0, sizeof(float) * c);
          } else {
            std::memcpy(dst, x + (int64_t(iy) * w + ix) * c, sizeof(float) * c);
          }
        }
      }
    }
  }
}

void col2im_add(const float* dcols, int h, int w, int c, int kh, int kw,
                int stride, const ConvGeom& g, float* dx) {
  const int cols_k = kh * kw * c;
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      const float* row = dcols + (int64_t(oy) * g.out_w + ox) * cols_k;
      for (int ky = 0; ky < kh; ++ky) {
        int iy = oy * stride + ky - g.pad_top;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          int ix = ox * stride + kx - g.pad_left;
          if (ix < 0 || ix >= w) continue;
          const float* src = row + (ky * kw + kx) * c;
          float* dst = dx + (int64_t(iy) * w + ix) * c;
          for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

// dC[m,n] += A^T B with A (k x m), B (k x n), double accumulator.
void accumulate_at_b(const float* a, const float* b, double* c, int64_t k,
                     int64_t m, int64_t n) {
  for (int64_t p = 0; p < k; ++p) {
    const float* arow = a + p * m;
    const float* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

bool dropout_keep(uint64_t seed, int layer, int64_t element, float rate) {
  return rng_u01(rng_key(seed, uint64_t(layer), uint64_t(element))) >= rate;
}

[[noreturn]] void shape_error(int layer, LayerKind kind, const std::string& expected,
                              const std::vector<int64_t>& actual) {
  fail(ErrorCode::shape_mismatch,
       "layer " + std::to_string(layer) + " (" + layer_kind_name(kind) +
           "): expected input " + expected + ", got " + shape_str(actual));
}

}  // namespace

const char* layer_kind_name(LayerKind kind) { return kKindNames[int(kind)]; }

LayerKind layer_kind_from_name(const std::string& name) {
  for (int i = 0; i < 8; ++i)
    if (name == kKindNames[i]) return LayerKind(i);
  fail(ErrorCode::format, "unknown layer kind '" + name + "'");
}

const char* padding_name(Padding p) { return p == Padding::same ? "same" : "valid"; }

Padding padding_from_name(const std::string& name) {
  if (name == "same") return Padding::same;
  if (name == "valid") return Padding::valid;
  fail(ErrorCode::format, "unknown padding '" + name + "'");
}

LayerSpec make_conv2d(int kh, int kw, int in_ch, int out_ch, int stride,
                      Padding padding, bool with_bias) {
  LayerSpec l;
  l.kind = LayerKind::conv2d;
  l.kernel_h = kh;
  l.kernel_w = kw;
  l.in_channels = in_ch;
  l.out_channels = out_ch;
  l.stride = stride;
  l.padding = padding;
  l.weight = Tensor({kh, kw, in_ch, out_ch});
  if (with_bias) l.bias = Tensor({out_ch});
  return l;
}

LayerSpec make_dense(int in, int out, bool with_bias) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.in_features = in;
  l.out_features = out;
  l.weight = Tensor({in, out});
  if (with_bias) l.bias = Tensor({out});
  return l;
}

LayerSpec make_relu() {
  LayerSpec l;
  l.kind = LayerKind::relu;
  return l;
}

LayerSpec make_maxpool(int ph, int pw, int stride, Padding padding) {
  LayerSpec l;
  l.kind = LayerKind::maxpool;
  l.pool_h = ph;
  l.pool_w = pw;
  l.stride = stride;
  l.padding = padding;
  return l;
}

LayerSpec make_globalavgpool() {
  LayerSpec l;
  l.kind = LayerKind::globalavgpool;
  return l;
}

LayerSpec make_dropout(float rate) {
  LayerSpec l;
  l.kind = LayerKind::dropout;
  l.drop_rate = rate;
  return l;
}

LayerSpec make_flatten() {
  LayerSpec l;
  l.kind = LayerKind::flatten;
  return l;
}

LayerSpec make_softmax() {
  LayerSpec l;
  l.kind = LayerKind::softmax;
  return l;
}

int ModelSpec::depth() const {
  int d = 0;
  for (const auto& l : layers) d += l.parameterized() ? 1 : 0;
  return d;
}

std::vector<int64_t> ModelSpec::shape_at(int k) const {
  if (k < 0 || k > int(layers.size()))
    fail(ErrorCode::invalid_argument,
         "layer index " + std::to_string(k) + " out of range [0, " +
             std::to_string(layers.size()) + "]");
  std::vector<int64_t> s = input_shape;
  for (int i = 0; i < k; ++i) {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::conv2d: {
        if (s.size() != 3 || s[2] != l.in_channels)
          shape_error(i, l.kind,
                      "(H, W, " + std::to_string(l.in_channels) + ")", s);
        ConvGeom g = conv_geometry(int(s[0]), int(s[1]), l.kernel_h, l.kernel_w,
                                   l.stride, l.padding, i, "conv2d");
        s = {g.out_h, g.out_w, l.out_channels};
        break;
      }
      case LayerKind::dense:
        if (s.size() != 1 || s[0] != l.in_features)
          shape_error(i, l.kind, "(" + std::to_string(l.in_features) + ")", s);
        s = {l.out_features};
        break;
      case LayerKind::maxpool: {
        if (s.size() != 3) shape_error(i, l.kind, "(H, W, C)", s);
        ConvGeom g = conv_geometry(int(s[0]), int(s[1]), l.pool_h, l.pool_w,
                                   l.stride, l.padding, i, "maxpool");
        s = {g.out_h, g.out_w, s[2]};
        break;
      }
      case LayerKind::globalavgpool:
        if (s.size() != 3) shape_error(i, l.kind, "(H, W, C)", s);
        s = {s[2]};
        break;
      case LayerKind::flatten: {
        int64_t p = 1;
        for (int64_t e : s) p *= e;
        s = {p};
        break;
      }
      case LayerKind::softmax:
        if (s.size() != 1) shape_error(i, l.kind, "(features)", s);
        break;
      case LayerKind::relu:
      case LayerKind::dropout:
        break;
    }
  }
  return s;
}

int ModelSpec::logits_index() const {
  int k = int(layers.size());
  while (k > 0 && layers[k - 1].kind == LayerKind::softmax) --k;
  return k;
}

void ModelSpec::validate() const {
  if (layers.empty()) fail(ErrorCode::invalid_argument, "model has no layers");
  if (num_classes < 1) fail(ErrorCode::invalid_argument, "num_classes < 1");
  if (depth() < 1) fail(ErrorCode::invalid_argument, "model has no parameterized layer");
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.kind == LayerKind::conv2d) {
      std::vector<int64_t> want{l.kernel_h, l.kernel_w, l.in_channels, l.out_channels};
      if (l.weight.shape != want)
        fail(ErrorCode::shape_mismatch,
             "layer " + std::to_string(i) + ": conv weight " + shape_str(l.weight.shape) +
                 " does not match spec " + shape_str(want));
      if (!l.bias.empty() && l.bias.shape != std::vector<int64_t>{l.out_channels})
        fail(ErrorCode::shape_mismatch, "layer " + std::to_string(i) + ": bad conv bias shape");
    } else if (l.kind == LayerKind::dense) {
      std::vector<int64_t> want{l.in_features, l.out_features};
      if (l.weight.shape != want)
        fail(ErrorCode::shape_mismatch,
             "layer " + std::to_string(i) + ": dense weight " + shape_str(l.weight.shape) +
                 " does not match spec " + shape_str(want));
      if (!l.bias.empty() && l.bias.shape != std::vector<int64_t>{l.out_features})
        fail(ErrorCode::shape_mismatch, "layer " + std::to_string(i) + ": bad dense bias shape");
    }
  }
  std::vector<int64_t> out = shape_at(logits_index());
  if (out != std::vector<int64_t>{num_classes})
    fail(ErrorCode::shape_mismatch,
         "final layer output " + shape_str(out) + " does not equal (num_classes) = (" +
             std::to_string(num_classes) + ")");
}

const Tensor& ActivationTrace::at(int k) const {
  auto it = activations.find(k);
  if (it == activations.end())
    fail(ErrorCode::invalid_argument, "trace has no layer " + std::to_string(k));
  return it->second;
}

namespace {

Tensor apply_layer(const ModelSpec& model, int layer_index, const Tensor& x,
                   Mode mode, uint64_t dropout_seed) {
  const LayerSpec& l = model.layers[layer_index];
  const int64_t n = x.extent(0);
  std::vector<int64_t> per_sample(x.shape.begin() + 1, x.shape.end());

  switch (l.kind) {
    case LayerKind::conv2d: {
      if (per_sample.size() != 3 || per_sample[2] != l.in_channels)
        shape_error(layer_index, l.kind,
                    "(N, H, W, " + std::to_string(l.in_channels) + ")", x.shape);
      int h = int(per_sample[0]), w = int(per_sample[1]), c = l.in_channels;
      ConvGeom g = conv_geometry(h, w, l.kernel_h, l.kernel_w, l.stride, l.padding,
                                 layer_index, "conv2d");
      const int64_t cols_k = int64_t(l.kernel_h) * l.kernel_w * c;
      const int64_t rows = int64_t(g.out_h) * g.out_w;
      Tensor y({n, g.out_h, g.out_w, l.out_channels});
      std::vector<float> cols(size_t(rows * cols_k));
      for (int64_t s = 0; s < n; ++s) {
        im2col(x.sample(s), h, w, c, l.kernel_h, l.kernel_w, l.stride, g, cols.data());
        gemm_f32(cols.data(), l.weight.data.data(), y.sample(s), rows, cols_k,
                 l.out_channels);
        if (!l.bias.empty()) {
          float* ys = y.sample(s);
          for (int64_t r = 0; r < rows; ++r)
            for (int oc = 0; oc < l.out_channels; ++oc)
              ys[r * l.out_channels + oc] += l.bias.data[oc];
        }
      }
      return y;
    }
    case LayerKind::dense: {
      if (per_sample.size() != 1 || per_sample[0] != l.in_features)
        shape_error(layer_index, l.kind, "(N, " + std::to_string(l.in_features) + ")",
                    x.shape);
      Tensor y({n, l.out_features});
      gemm_f32(x.data.data(), l.weight.data.data(), y.data.data(), n, l.in_features,
               l.out_features);
      if (!l.bias.empty())
        for (int64_t s = 0; s < n; ++s)
          for (int o = 0; o < l.out_features; ++o)
            y.data[s * l.out_features + o] += l.bias.data[o];
      return y;
    }
    case LayerKind::relu: {
      Tensor y = x;
      for (float& v : y.data) v = v > 0.0f ? v : 0.0f;
      return y;
    }
    case LayerKind::maxpool: {
      if (per_sample.size() != 3) shape_error(layer_index, l.kind, "(N, H, W, C)", x.shape);
      int h = int(per_sample[0]), w = int(per_sample[1]), c = int(per_sample[2]);
      ConvGeom g = conv_geometry(h, w, l.pool_h, l.pool_w, l.stride, l.padding,
                                 layer_index, "maxpool");
      Tensor y({n, g.out_h, g.out_w, per_sample[2]});
      for (int64_t s = 0; s < n; ++s) {
        const float* xs = x.sample(s);
        float* ys = y.sample(s);
        for (int oy = 0; oy < g.out_h; ++oy)
          for (int ox = 0; ox < g.out_w; ++ox)
            for (int ch = 0; ch < c; ++ch) {
              float best = 0.0f;
              bool first = true;
              for (int ky = 0; ky < l.pool_h; ++ky) {
                int iy = oy * l.stride + ky - g.pad_top;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < l.pool_w; ++kx) {
                  int ix = ox * l.stride + kx - g.pad_left;
                  if (ix < 0 || ix >= w) continue;
                  float v = xs[(int64_t(iy) * w + ix) * c + ch];
                  if (first || v > best) {  // ties keep the first element
                    best = v;
                    first = false;
                  }
                }
              }
              ys[(int64_t(oy) * g.out_w + ox) * c + ch] = best;
            }
      }
      return y;
    }
    case LayerKind::globalavgpool: {
      if (per_sample.size() != 3) shape_error(layer_index, l.kind, "(N, H, W, C)", x.shape);
      int64_t hw = per_sample[0] * per_sample[1];
      int c = int(per_sample[2]);
      Tensor y({n, per_sample[2]});
      for (int64_t s = 0; s < n; ++s) {
        const float* xs = x.sample(s);
        float* ys = y.sample(s);
        for (int ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (int64_t p = 0; p < hw; ++p) acc += xs[p * c + ch];
          ys[ch] = float(acc / double(hw));
        }
      }
      return y;
    }
    case LayerKind::dropout: {
      if (mode == Mode::eval || l.drop_rate <= 0.0f) return x;
      Tensor y = x;
      const float scale = 1.0f / (1.0f - l.drop_rate);
      for (int64_t i = 0; i < y.numel(); ++i)
        y.data[i] = dropout_keep(dropout_seed, layer_index, i, l.drop_rate)
                        ? y.data[i] * scale
                        : 0.0f;
      return y;
    }
    case LayerKind::flatten: {
      Tensor y = x;
      y.shape = {n, x.sample_size()};
      return y;
    }
    case LayerKind::softmax: {
      if (per_sample.size() != 1) shape_error(layer_index, l.kind, "(N, features)", x.shape);
      return softmax_rows(x);
    }
  }
  fail(ErrorCode::unsupported, "unhandled layer kind");
}

// dY -> dX; optionally fills weight/bias gradients (double accumulators).
Tensor backward_layer(const ModelSpec& model, int layer_index, const Tensor& x,
                      const Tensor& dy, Mode mode, uint64_t dropout_seed,
                      std::vector<double>* dweight, std::vector<double>* dbias) {
  const LayerSpec& l = model.layers[layer_index];
  const int64_t n = x.extent(0);

  switch (l.kind) {
    case LayerKind::conv2d: {
      int h = int(x.shape[1]), w = int(x.shape[2]), c = l.in_channels;
      ConvGeom g = conv_geometry(h, w, l.kernel_h, l.kernel_w, l.stride, l.padding,
                                 layer_index, "conv2d");
      const int64_t cols_k = int64_t(l.kernel_h) * l.kernel_w * c;
      const int64_t rows = int64_t(g.out_h) * g.out_w;
      Tensor dx(x.shape);
      std::vector<float> cols(size_t(rows * cols_k));
      std::vector<float> dcols(size_t(rows * cols_k));
      for (int64_t s = 0; s < n; ++s) {
        const float* dys = dy.sample(s);
        if (dweight) {
          im2col(x.sample(s), h, w, c, l.kernel_h, l.kernel_w, l.stride, g, cols.data());
          accumulate_at_b(cols.data(), dys, dweight->data(), rows, cols_k,
                          l.out_channels);
        }
        if (dbias && !l.bias.empty()) {
          for (int64_t r = 0; r < rows; ++r)
            for (int oc = 0; oc < l.out_channels; ++oc)
              (*dbias)[oc] += dys[r * l.out_channels + oc];
        }
        gemm_a_bt(dys, l.weight.data.data(), dcols.data(), rows, l.out_channels,
                  cols_k);
        col2im_add(dcols.data(), h, w, c, l.kernel_h, l.kernel_w, l.stride, g,
                   dx.sample(s));
      }
      return dx;
    }
    case LayerKind::dense: {
      Tensor dx({n, l.in_features});
      gemm_a_bt(dy.data.data(), l.weight.data.data(), dx.data.data(), n,
                l.out_features, l.in_features);
      if (dweight)
        accumulate_at_b(x.data.data(), dy.data.data(), dweight->data(), n,
                        l.in_features, l.out_features);
      if (dbias && !l.bias.empty())
        for (int64_t s = 0; s < n; ++s)
          for (int o = 0; o < l.out_features; ++o)
            (*dbias)[o] += dy.data[s * l.out_features + o];
      return dx;
    }
    case LayerKind::relu: {
      Tensor dx = dy;
      for (int64_t i = 0; i < dx.numel(); ++i)
        if (x.data[i] <= 0.0f) dx.data[i] = 0.0f;
      return dx;
    }
    case LayerKind::maxpool: {
      int h = int(x.shape[1]), w = int(x.shape[2]), c = int(x.shape[3]);
      ConvGeom g = conv_geometry(h, w, l.pool_h, l.pool_w, l.stride, l.padding,
                                 layer_index, "maxpool");
      Tensor dx(x.shape);
      for (int64_t s = 0; s < n; ++s) {
        const float* xs = x.sample(s);
        const float* dys = dy.sample(s);
        float* dxs = dx.sample(s);
        for (int oy = 0; oy < g.out_h; ++oy)
          for (int ox = 0; ox < g.out_w; ++ox)
            for (int ch = 0; ch < c; ++ch) {
              float best = 0.0f;
              bool first = true;
              int64_t best_idx = -1;
              for (int ky = 0; ky < l.pool_h; ++ky) {
                int iy = oy * l.stride + ky - g.pad_top;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < l.pool_w; ++kx) {
                  int ix = ox * l.stride + kx - g.pad_left;
                  if (ix < 0 || ix >= w) continue;
                  int64_t idx = (int64_t(iy) * w + ix) * c + ch;
                  if (first || xs[idx] > best) {
                    best = xs[idx];
                    best_idx = idx;
                    first = false;
                  }
                }
              }
              if (best_idx >= 0)
                dxs[best_idx] += dys[(int64_t(oy) * g.out_w + ox) * c + ch];
            }
      }
      return dx;
    }
    case LayerKind::globalavgpool: {
      int64_t hw = x.shape[1] * x.shape[2];
      int c = int(x.shape[3]);
      Tensor dx(x.shape);
      for (int64_t s = 0; s < n; ++s) {
        const float* dys = dy.sample(s);
        float* dxs = dx.sample(s);
        for (int64_t p = 0; p < hw; ++p)
          for (int ch = 0; ch < c; ++ch)
            dxs[p * c + ch] = dys[ch] / float(hw);
      }
      return dx;
    }
    case LayerKind::dropout: {
      if (mode == Mode::eval || l.drop_rate <= 0.0f) return dy;
      Tensor dx = dy;
      const float scale = 1.0f / (1.0f - l.drop_rate);
      for (int64_t i = 0; i < dx.numel(); ++i)
        dx.data[i] = dropout_keep(dropout_seed, layer_index, i, l.drop_rate)
                         ? dx.data[i] * scale
                         : 0.0f;
      return dx;
    }
    case LayerKind::flatten: {
      Tensor dx = dy;
      dx.shape = x.shape;
      return dx;
    }
    case LayerKind::softmax: {
      // dx = y .* (dy - sum(dy .* y)) per row
      Tensor y = softmax_rows(x);
      int64_t k = y.sample_size();
      Tensor dx(x.shape);
      for (int64_t s = 0; s < n; ++s) {
        const float* ys = y.sample(s);
        const float* dys = dy.sample(s);
        float* dxs = dx.sample(s);
        double dot = 0.0;
        for (int64_t j = 0; j < k; ++j) dot += double(dys[j]) * ys[j];
        for (int64_t j = 0; j < k; ++j)
          dxs[j] = float(ys[j] * (double(dys[j]) - dot));
      }
      return dx;
    }
  }
  fail(ErrorCode::unsupported, "unhandled layer kind");
}

void check_batch_input(const ModelSpec& model, const Tensor& inputs) {
  if (inputs.rank() < 1 || inputs.extent(0) < 1)
    fail(ErrorCode::invalid_argument, "empty input batch");
  std::vector<int64_t> per_sample(inputs.shape.begin() + 1, inputs.shape.end());
  if (per_sample != model.input_shape)
    fail(ErrorCode::shape_mismatch,
         "input sample shape " + shape_str(per_sample) + " does not match model input " +
             shape_str(model.input_shape));
}

}  // namespace

ForwardResult forward(const ModelSpec& model, const Tensor& inputs,
                      const std::set<int>& capture, Mode mode,
                      uint64_t dropout_seed) {
  check_batch_input(model, inputs);
  const int num_layers = int(model.layers.size());
  for (int k : capture)
    if (k < 0 || k > num_layers)
      fail(ErrorCode::invalid_argument,
           "capture index " + std::to_string(k) + " out of range [0, " +
               std::to_string(num_layers) + "]");

  ForwardResult result;
  Tensor act = inputs;
  if (capture.count(0)) result.trace.activations[0] = act;
  const int logits_at = model.logits_index();
  for (int i = 0; i < num_layers; ++i) {
    act = apply_layer(model, i, act, mode, dropout_seed);
    check_finite(act, "activations", i);
    if (i + 1 == logits_at) result.logits = act;
    if (capture.count(i + 1)) result.trace.activations[i + 1] = act;
  }
  if (logits_at == 0) result.logits = inputs;
  return result;
}

Tensor forward_from(const ModelSpec& model, int k, const Tensor& activations) {
  const int logits_at = model.logits_index();
  if (k < 0 || k > logits_at)
    fail(ErrorCode::invalid_argument,
         "layer index " + std::to_string(k) + " out of range [0, " +
             std::to_string(logits_at) + "]");
  if (activations.rank() < 1 || activations.extent(0) < 1)
    fail(ErrorCode::invalid_argument, "empty activation batch");
  std::vector<int64_t> per_sample(activations.shape.begin() + 1, activations.shape.end());
  std::vector<int64_t> want = model.shape_at(k);
  if (per_sample != want)
    fail(ErrorCode::shape_mismatch,
         "activations at layer " + std::to_string(k) + " have sample shape " +
             shape_str(per_sample) + ", expected " + shape_str(want));

  Tensor act = activations;
  for (int i = k; i < logits_at; ++i) {
    act = apply_layer(model, i, act, Mode::eval, 0);
    check_finite(act, "activations", i);
  }
  return act;
}

Tensor logit_diff_grads(const ModelSpec& model, int k, const Tensor& activations,
                        const std::vector<std::pair<int, int>>& pairs) {
  const int logits_at = model.logits_index();
  if (k < 0 || k > logits_at)
    fail(ErrorCode::invalid_argument, "layer index " + std::to_string(k) + " out of range");
  const int64_t n = activations.extent(0);
  if (int64_t(pairs.size()) != n)
    fail(ErrorCode::invalid_argument, "need one class pair per sample");
  for (const auto& [i, j] : pairs) {
    if (i == j) fail(ErrorCode::invalid_argument, "class pair (i, j) must have i != j");
    if (i < 0 || i >= model.num_classes || j < 0 || j >= model.num_classes)
      fail(ErrorCode::invalid_argument, "class index out of range");
  }

  // Forward from k, caching layer inputs for the backward sweep.
  std::vector<Tensor> acts;
  acts.reserve(logits_at - k + 1);
  acts.push_back(activations);
  for (int i = k; i < logits_at; ++i) {
    acts.push_back(apply_layer(model, i, acts.back(), Mode::eval, 0));
    check_finite(acts.back(), "activations", i);
  }

  Tensor grad({n, model.num_classes});
  for (int64_t s = 0; s < n; ++s) {
    grad.data[s * model.num_classes + pairs[s].first] = 1.0f;
    grad.data[s * model.num_classes + pairs[s].second] = -1.0f;
  }
  for (int i = logits_at - 1; i >= k; --i) {
    grad = backward_layer(model, i, acts[i - k], grad, Mode::eval, 0, nullptr, nullptr);
    check_finite(grad, "gradients", i);
  }
  return grad;
}

Tensor grad_wrt_activation(const ModelSpec& model, int k, const Tensor& activations,
                           int class_i, int class_j) {
  std::vector<std::pair<int, int>> pairs(size_t(activations.extent(0)),
                                         {class_i, class_j});
  return logit_diff_grads(model, k, activations, pairs);
}

std::vector<LayerGrads> grad_wrt_weights(const ModelSpec& model, const Tensor& inputs,
                                         const std::vector<int32_t>& labels,
                                         uint64_t dropout_seed, Tensor* out_logits,
                                         double* out_loss) {
  check_batch_input(model, inputs);
  const int64_t n = inputs.extent(0);
  if (int64_t(labels.size()) != n)
    fail(ErrorCode::invalid_argument, "label count does not match batch size");
  for (int32_t y : labels)
    if (y < 0 || y >= model.num_classes)
      fail(ErrorCode::invalid_argument,
           "label " + std::to_string(y) + " out of range [0, " +
               std::to_string(model.num_classes) + ")");

  const int logits_at = model.logits_index();
  std::vector<Tensor> acts;
  acts.reserve(logits_at + 1);
  acts.push_back(inputs);
  for (int i = 0; i < logits_at; ++i) {
    acts.push_back(apply_layer(model, i, acts.back(), Mode::train, dropout_seed));
    check_finite(acts.back(), "activations", i);
  }
  const Tensor& logits = acts.back();
  if (out_logits) *out_logits = logits;
  if (out_loss) *out_loss = cross_entropy(logits, labels);

  // d(mean CE)/dlogits = (softmax - onehot) / n
  Tensor probs = softmax_rows(logits);
  Tensor grad = probs;
  const int k = model.num_classes;
  for (int64_t s = 0; s < n; ++s) {
    grad.data[s * k + labels[s]] -= 1.0f;
    for (int j = 0; j < k; ++j) grad.data[s * k + j] /= float(n);
  }

  std::vector<LayerGrads> out(model.layers.size());
  for (int i = logits_at - 1; i >= 0; --i) {
    const LayerSpec& l = model.layers[i];
    std::vector<double> dw, db;
    std::vector<double>* dwp = nullptr;
    std::vector<double>* dbp = nullptr;
    if (l.parameterized()) {
      dw.assign(size_t(l.weight.numel()), 0.0);
      dwp = &dw;
      if (!l.bias.empty()) {
        db.assign(size_t(l.bias.numel()), 0.0);
        dbp = &db;
      }
    }
    grad = backward_layer(model, i, acts[i], grad, Mode::train, dropout_seed, dwp, dbp);
    check_finite(grad, "gradients", i);
    if (l.parameterized()) {
      out[i].weight = Tensor(l.weight.shape);
      for (size_t t = 0; t < dw.size(); ++t) out[i].weight.data[t] = float(dw[t]);
      if (!l.bias.empty()) {
        out[i].bias = Tensor(l.bias.shape);
        for (size_t t = 0; t < db.size(); ++t) out[i].bias.data[t] = float(db[t]);
      }
    }
  }
  return out;
}

double spectral_norm(const Tensor& weight) {
  int64_t rows, cols;
  if (weight.rank() == 2) {
    rows = weight.shape[0];
    cols = weight.shape[1];
  } else if (weight.rank() == 4) {
    rows = weight.shape[0] * weight.shape[1] * weight.shape[2];
    cols = weight.shape[3];
  } else {
    fail(ErrorCode::invalid_argument,
         "spectral_norm expects a matrix or conv kernel, got " + shape_str(weight.shape));
  }
  bool all_zero = true;
  for (float v : weight.data)
    if (v != 0.0f) {
      all_zero = false;
      break;
    }
  if (all_zero || rows == 0 || cols == 0) return 0.0;

  const float* m = weight.data.data();
  std::vector<double> v(static_cast<size_t>(cols)), u(static_cast<size_t>(rows));
  for (int64_t i = 0; i < cols; ++i)
    v[i] = rng_u01(rng_key(0x53504543ull, uint64_t(i))) + 0.5;

  auto normalize = [](std::vector<double>& x) {
    double s = 0.0;
    for (double t : x) s += t * t;
    s = std::sqrt(s);
    if (s > 0)
      for (double& t : x) t /= s;
    return s;
  };
  normalize(v);

  double sigma = 0.0;
  for (int iter = 0; iter < 200; ++iter) {
    for (int64_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (int64_t c = 0; c < cols; ++c) acc += double(m[r * cols + c]) * v[c];
      u[r] = acc;
    }
    double new_sigma = normalize(u);
    for (int64_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int64_t r = 0; r < rows; ++r) acc += double(m[r * cols + c]) * u[r];
      v[c] = acc;
    }
    normalize(v);
    if (new_sigma == 0.0) return 0.0;
    if (std::abs(new_sigma - sigma) < 1e-6 * std::max(new_sigma, 1e-30)) {
      sigma = new_sigma;
      break;
    }
    sigma = new_sigma;
  }
  return sigma;
}

double frobenius_norm(const Tensor& weight) {
  double acc = 0.0;
  for (float v : weight.data) acc += double(v) * v;
  return std::sqrt(acc);
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2)
    fail(ErrorCode::invalid_argument, "softmax expects (N, features), got " + shape_str(logits.shape));
  const int64_t n = logits.shape[0], k = logits.shape[1];
  Tensor y(logits.shape);
  for (int64_t s = 0; s < n; ++s) {
    const float* xs = logits.sample(s);
    float* ys = y.sample(s);
    float mx = xs[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, xs[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j) sum += std::exp(double(xs[j]) - mx);
    for (int64_t j = 0; j < k; ++j)
      ys[j] = float(std::exp(double(xs[j]) - mx) / sum);
  }
  return y;
}

double cross_entropy(const Tensor& logits, const std::vector<int32_t>& labels) {
  if (logits.rank() != 2 || int64_t(labels.size()) != logits.shape[0])
    fail(ErrorCode::invalid_argument, "cross_entropy: logits/labels mismatch");
  const int64_t n = logits.shape[0], k = logits.shape[1];
  double total = 0.0;
  for (int64_t s = 0; s < n; ++s) {
    const float* xs = logits.sample(s);
    float mx = xs[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, xs[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j) sum += std::exp(double(xs[j]) - mx);
    total += std::log(sum) - (double(xs[labels[s]]) - mx);
  }
  return total / double(n);
}

}  // namespace gapkit
