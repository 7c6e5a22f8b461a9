// Independent reference implementations used as test oracles. Everything
// here is written directly from the defining formulas and stays separate
// from the library code paths it checks.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "core/model.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace oracles {

using gapkit::Tensor;

// Direct six-loop convolution. x: (N,H,W,C), w: (kh,kw,C,OC), zero padding,
// TF-style "same" geometry (out = ceil(in/stride), pad split low/high).
inline Tensor conv2d_direct(const Tensor& x, const Tensor& w,
                            const std::vector<float>& bias, int stride,
                            bool same_padding) {
  const int n = int(x.shape[0]), h = int(x.shape[1]), wd = int(x.shape[2]),
            c = int(x.shape[3]);
  const int kh = int(w.shape[0]), kw = int(w.shape[1]), oc = int(w.shape[3]);
  int oh, ow, pad_top = 0, pad_left = 0;
  if (same_padding) {
    oh = (h + stride - 1) / stride;
    ow = (wd + stride - 1) / stride;
    pad_top = std::max(0, (oh - 1) * stride + kh - h) / 2;
    pad_left = std::max(0, (ow - 1) * stride + kw - wd) / 2;
  } else {
    oh = (h - kh) / stride + 1;
    ow = (wd - kw) / stride + 1;
  }
  Tensor y({n, oh, ow, oc});
  for (int s = 0; s < n; ++s)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int f = 0; f < oc; ++f) {
          double acc = bias.empty() ? 0.0 : double(bias[size_t(f)]);
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx)
              for (int ch = 0; ch < c; ++ch) {
                int iy = oy * stride + ky - pad_top;
                int ix = ox * stride + kx - pad_left;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += double(x.data[((int64_t(s) * h + iy) * wd + ix) * c + ch]) *
                       double(w.data[((int64_t(ky) * kw + kx) * c + ch) * oc + f]);
              }
          y.data[((int64_t(s) * oh + oy) * ow + ox) * oc + f] = float(acc);
        }
  return y;
}

// Brute-force window maximum (valid padding).
inline Tensor maxpool_direct(const Tensor& x, int ph, int pw, int stride) {
  const int n = int(x.shape[0]), h = int(x.shape[1]), wd = int(x.shape[2]),
            c = int(x.shape[3]);
  const int oh = (h - ph) / stride + 1, ow = (wd - pw) / stride + 1;
  Tensor y({n, oh, ow, c});
  for (int s = 0; s < n; ++s)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int ch = 0; ch < c; ++ch) {
          float best = -1e30f;
          for (int ky = 0; ky < ph; ++ky)
            for (int kx = 0; kx < pw; ++kx)
              best = std::max(best,
                              x.data[((int64_t(s) * h + oy * stride + ky) * wd +
                                      ox * stride + kx) * c + ch]);
          y.data[((int64_t(s) * oh + oy) * ow + ox) * c + ch] = best;
        }
  return y;
}

inline Tensor dense_direct(const Tensor& x, const Tensor& w,
                           const std::vector<float>& bias) {
  const int64_t n = x.shape[0], in = w.shape[0], out = w.shape[1];
  Tensor y({n, out});
  for (int64_t s = 0; s < n; ++s)
    for (int64_t o = 0; o < out; ++o) {
      double acc = bias.empty() ? 0.0 : double(bias[size_t(o)]);
      for (int64_t i = 0; i < in; ++i)
        acc += double(x.data[s * in + i]) * double(w.data[i * out + o]);
      y.data[s * out + o] = float(acc);
    }
  return y;
}

// Davies-Bouldin straight from the formula: S_i = (mean ||x - mu_i||^p)^(1/p)
// with the p-norm, M_ij = ||mu_i - mu_j||_p, per-class max (or mean) of
// (S_i + S_j) / M_ij, averaged over classes.
inline double davies_bouldin_direct(const std::vector<std::vector<double>>& points,
                                    const std::vector<int>& labels, double p,
                                    bool aggregate_mean) {
  std::map<int, std::vector<size_t>> classes;
  for (size_t i = 0; i < labels.size(); ++i) classes[labels[i]].push_back(i);
  const size_t dims = points.front().size();

  std::vector<std::vector<double>> mu;
  std::vector<double> scatter;
  for (auto& [cls, members] : classes) {
    std::vector<double> centroid(dims, 0.0);
    for (size_t m : members)
      for (size_t d = 0; d < dims; ++d) centroid[d] += points[m][d];
    for (size_t d = 0; d < dims; ++d) centroid[d] /= double(members.size());
    double acc = 0.0;
    for (size_t m : members)
      for (size_t d = 0; d < dims; ++d)
        acc += std::pow(std::abs(points[m][d] - centroid[d]), p);
    scatter.push_back(std::pow(acc / double(members.size()), 1.0 / p));
    mu.push_back(centroid);
  }

  const size_t nc = mu.size();
  double total = 0.0;
  for (size_t i = 0; i < nc; ++i) {
    double agg = aggregate_mean ? 0.0 : -1e300;
    for (size_t j = 0; j < nc; ++j) {
      if (i == j) continue;
      double sep = 0.0;
      for (size_t d = 0; d < dims; ++d)
        sep += std::pow(std::abs(mu[i][d] - mu[j][d]), p);
      sep = std::pow(sep, 1.0 / p);
      double ratio = (scatter[i] + scatter[j]) / sep;
      if (aggregate_mean)
        agg += ratio / double(nc - 1);
      else
        agg = std::max(agg, ratio);
    }
    total += agg;
  }
  return total / double(nc);
}

// Exhaustive conditional-MI protocol: every axis subset up to max_size,
// pairs within cells, tie pairs dropped, pair-weighted entropies.
struct CmiOracleInput {
  std::vector<double> measures;
  std::vector<double> gaps;
  std::vector<std::vector<int>> axes;  // per record, per axis
};

inline double cmi_oracle(const CmiOracleInput& in, int max_size,
                         double log_base = M_E) {
  const size_t n = in.measures.size();
  const int n_axes = in.axes.empty() ? 0 : int(in.axes[0].size());

  std::vector<std::vector<int>> subsets;
  for (int mask = 0; mask < (1 << n_axes); ++mask) {
    if (__builtin_popcount(unsigned(mask)) > max_size) continue;
    std::vector<int> s;
    for (int a = 0; a < n_axes; ++a)
      if (mask & (1 << a)) s.push_back(a);
    subsets.push_back(s);
  }

  auto logb = [&](double v) { return std::log(v) / std::log(log_base); };
  bool any = false;
  double best = 0.0;
  for (const auto& subset : subsets) {
    std::map<std::vector<int>, std::vector<size_t>> cells;
    for (size_t r = 0; r < n; ++r) {
      std::vector<int> key;
      for (int a : subset) key.push_back(in.axes[r][size_t(a)]);
      cells[key].push_back(r);
    }
    double total_pairs = 0.0;
    std::vector<std::array<double, 4>> counts;  // (-,-) (-,+) (+,-) (+,+)
    for (auto& [key, members] : cells) {
      std::array<double, 4> c{};
      for (size_t a = 0; a < members.size(); ++a)
        for (size_t b = a + 1; b < members.size(); ++b) {
          double dm = in.measures[members[a]] - in.measures[members[b]];
          double dg = in.gaps[members[a]] - in.gaps[members[b]];
          if (dm == 0.0 || dg == 0.0) continue;
          // both orientations of the unordered pair
          c[size_t((dm > 0 ? 2 : 0) + (dg > 0 ? 1 : 0))] += 1.0;
          c[size_t((dm > 0 ? 0 : 2) + (dg > 0 ? 0 : 1))] += 1.0;
        }
      total_pairs += c[0] + c[1] + c[2] + c[3];
      counts.push_back(c);
    }
    if (total_pairs == 0.0) continue;
    double mi = 0.0, h = 0.0;
    for (const auto& c : counts) {
      double cell = c[0] + c[1] + c[2] + c[3];
      if (cell == 0.0) continue;
      double weight = cell / total_pairs;
      double pm[2] = {(c[0] + c[1]) / cell, (c[2] + c[3]) / cell};
      double pg[2] = {(c[0] + c[2]) / cell, (c[1] + c[3]) / cell};
      double cell_mi = 0.0;
      for (int u = 0; u < 2; ++u)
        for (int v = 0; v < 2; ++v) {
          double p = c[size_t(u * 2 + v)] / cell;
          if (p > 0.0) cell_mi += p * logb(p / (pm[u] * pg[v]));
        }
      double cell_h = 0.0;
      for (int v = 0; v < 2; ++v)
        if (pg[v] > 0.0) cell_h -= pg[v] * logb(pg[v]);
      mi += weight * cell_mi;
      h += weight * cell_h;
    }
    if (h <= 0.0) continue;
    double ratio = std::max(0.0, mi) / h;
    if (!any || ratio < best) best = ratio;
    any = true;
  }
  if (!any) return -1.0;
  return 100.0 * std::min(1.0, best);
}

// Reference RGB -> HSV (hue in turns), written from the piecewise
// definition.
inline void ref_rgb_to_hsv(double r, double g, double b, double& h, double& s,
                           double& v) {
  double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  v = mx;
  s = mx > 0 ? (mx - mn) / mx : 0.0;
  if (mx == mn) {
    h = 0.0;
    return;
  }
  double d = mx - mn;
  if (mx == r)
    h = std::fmod((g - b) / d, 6.0);
  else if (mx == g)
    h = (b - r) / d + 2.0;
  else
    h = (r - g) / d + 4.0;
  h /= 6.0;
  if (h < 0) h += 1.0;
}

inline void ref_hsv_to_rgb(double h, double s, double v, double& r, double& g,
                           double& b) {
  double c = v * s;
  double hp = (h - std::floor(h)) * 6.0;
  double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r1 = 0, g1 = 0, b1 = 0;
  if (hp < 1) { r1 = c; g1 = x; }
  else if (hp < 2) { r1 = x; g1 = c; }
  else if (hp < 3) { g1 = c; b1 = x; }
  else if (hp < 4) { g1 = x; b1 = c; }
  else if (hp < 5) { r1 = x; b1 = c; }
  else { r1 = c; b1 = x; }
  double m = v - c;
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

// --- random helpers (test-side RNG, independent of the library's) ---

inline Tensor random_tensor(std::mt19937& rng, std::vector<int64_t> shape,
                            float lo = -0.5f, float hi = 0.5f) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> dist(lo, hi);
  for (float& v : t.data) v = dist(rng);
  return t;
}

// Small random CNN: conv(+relu)(+pool) stages ending in gap-or-flatten and
// a dense head striking the class count.
inline gapkit::ModelSpec random_model(std::mt19937& rng, int num_classes,
                                      int image = 6, int channels = 2) {
  using namespace gapkit;
  ModelSpec model;
  model.input_shape = {image, image, channels};
  model.num_classes = num_classes;
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> kpick(1, 3);

  int h = image, w = image, c = channels;
  int stages = 1 + coin(rng);
  for (int s = 0; s < stages; ++s) {
    int kh = kpick(rng), kw = kpick(rng);
    int oc = 2 + coin(rng) * 2;
    bool same = coin(rng) != 0;
    if (!same && (kh > h || kw > w)) same = true;
    LayerSpec conv = make_conv2d(kh, kw, c, oc, 1, same ? Padding::same : Padding::valid);
    conv.weight = random_tensor(rng, conv.weight.shape);
    conv.bias = random_tensor(rng, conv.bias.shape, -0.1f, 0.1f);
    model.layers.push_back(std::move(conv));
    if (same) { /* h, w unchanged */ } else { h = h - kh + 1; w = w - kw + 1; }
    c = oc;
    if (coin(rng)) model.layers.push_back(make_relu());
    if (h >= 3 && w >= 3 && coin(rng)) {
      model.layers.push_back(make_maxpool(2, 2, 2, Padding::valid));
      h = (h - 2) / 2 + 1;
      w = (w - 2) / 2 + 1;
    }
  }
  int features;
  if (coin(rng)) {
    model.layers.push_back(make_globalavgpool());
    features = c;
  } else {
    model.layers.push_back(make_flatten());
    features = h * w * c;
  }
  LayerSpec head = make_dense(features, num_classes);
  head.weight = random_tensor(rng, head.weight.shape);
  head.bias = random_tensor(rng, head.bias.shape, -0.1f, 0.1f);
  model.layers.push_back(std::move(head));
  model.validate();
  return model;
}

// Plain MLP fixture: flatten -> [dense relu]* -> dense head, He-normal
// init from the library's counter RNG so runs are reproducible.
inline gapkit::ModelSpec small_mlp(const std::vector<int64_t>& input_shape,
                                   const std::vector<int>& hidden, int num_classes,
                                   uint64_t init_seed) {
  using namespace gapkit;
  ModelSpec m;
  m.input_shape = input_shape;
  m.num_classes = num_classes;
  m.layers.push_back(make_flatten());
  int64_t prev = 1;
  for (int64_t e : input_shape) prev *= e;
  for (int h : hidden) {
    m.layers.push_back(make_dense(int(prev), h));
    m.layers.push_back(make_relu());
    prev = h;
  }
  m.layers.push_back(make_dense(int(prev), num_classes));
  for (size_t li = 0; li < m.layers.size(); ++li) {
    LayerSpec& l = m.layers[li];
    if (!l.parameterized()) continue;
    double std = std::sqrt(2.0 / double(l.in_features));
    for (int64_t i = 0; i < l.weight.numel(); ++i)
      l.weight.data[size_t(i)] =
          float(std * rng_normal(rng_key(init_seed, uint64_t(li), uint64_t(i))));
  }
  m.validate();
  return m;
}

}  // namespace oracles
