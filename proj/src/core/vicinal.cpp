#include "core/vicinal.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace gapkit {

namespace {

enum OpIndex : uint64_t { kFlip = 0, kZoom, kHue, kSaturation, kBrightness, kContrast };

uint64_t draw_key(const AugmentConfig& cfg, int64_t sample, uint64_t op) {
  return rng_key(cfg.seed, uint64_t(sample), op);
}

void flip_horizontal(float* img, int h, int w, int c) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w / 2; ++x)
      for (int ch = 0; ch < c; ++ch)
        std::swap(img[(int64_t(y) * w + x) * c + ch],
                  img[(int64_t(y) * w + (w - 1 - x)) * c + ch]);
}

// Central crop of side fraction (1 - z), bilinear resize back to h x w.
void zoom_central(float* img, int h, int w, int c, double z) {
  if (z <= 0.0) return;
  std::vector<float> src(img, img + int64_t(h) * w * c);
  const double crop_h = (1.0 - z) * h;
  const double crop_w = (1.0 - z) * w;
  const double y0 = (h - crop_h) / 2.0;
  const double x0 = (w - crop_w) / 2.0;
  for (int y = 0; y < h; ++y) {
    double sy = y0 + (y + 0.5) * crop_h / h - 0.5;
    sy = std::clamp(sy, 0.0, double(h - 1));
    int iy = int(sy);
    int iy1 = std::min(iy + 1, h - 1);
    double fy = sy - iy;
    for (int x = 0; x < w; ++x) {
      double sx = x0 + (x + 0.5) * crop_w / w - 0.5;
      sx = std::clamp(sx, 0.0, double(w - 1));
      int ix = int(sx);
      int ix1 = std::min(ix + 1, w - 1);
      double fx = sx - ix;
      for (int ch = 0; ch < c; ++ch) {
        double v00 = src[(int64_t(iy) * w + ix) * c + ch];
        double v01 = src[(int64_t(iy) * w + ix1) * c + ch];
        double v10 = src[(int64_t(iy1) * w + ix) * c + ch];
        double v11 = src[(int64_t(iy1) * w + ix1) * c + ch];
        double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                   fy * ((1 - fx) * v10 + fx * v11);
        img[(int64_t(y) * w + x) * c + ch] = float(v);
      }
    }
  }
}

void shift_hue(float* img, int64_t pixels, double delta) {
  for (int64_t p = 0; p < pixels; ++p) {
    float* px = img + p * 3;
    float h, s, v;
    rgb_to_hsv(px[0], px[1], px[2], h, s, v);
    h = float(h + delta);
    h -= std::floor(h);  // cyclic mod 1
    hsv_to_rgb(h, s, v, px[0], px[1], px[2]);
  }
}

void scale_saturation(float* img, int64_t pixels, double factor) {
  for (int64_t p = 0; p < pixels; ++p) {
    float* px = img + p * 3;
    float h, s, v;
    rgb_to_hsv(px[0], px[1], px[2], h, s, v);
    s = std::clamp(float(s * factor), 0.0f, 1.0f);
    hsv_to_rgb(h, s, v, px[0], px[1], px[2]);
  }
}

void add_brightness(float* img, int64_t count, double delta) {
  for (int64_t i = 0; i < count; ++i) img[i] = float(img[i] + delta);
}

// x -> mean_c + factor * (x - mean_c), mean taken per channel.
void scale_contrast(float* img, int64_t pixels, int c, double factor) {
  for (int ch = 0; ch < c; ++ch) {
    double mean = 0.0;
    for (int64_t p = 0; p < pixels; ++p) mean += img[p * c + ch];
    mean /= double(pixels);
    for (int64_t p = 0; p < pixels; ++p)
      img[p * c + ch] = float(mean + factor * (img[p * c + ch] - mean));
  }
}

}  // namespace

void AugmentConfig::validate() const {
  if (saturation_lo > saturation_hi || contrast_lo > contrast_hi || zoom_lo > zoom_hi)
    fail(ErrorCode::invalid_argument, "augment config: range bounds out of order");
  if (hue_max_delta < 0 || brightness_max_delta < 0)
    fail(ErrorCode::invalid_argument, "augment config: negative max delta");
  if (zoom_lo < 0 || zoom_hi >= 0.5)
    fail(ErrorCode::invalid_argument, "augment config: zoom fraction must be in [0, 0.5)");
}

AugmentResult augment(const LabeledBatch& batch, const AugmentConfig& cfg) {
  cfg.validate();
  if (batch.images.rank() != 4)
    fail(ErrorCode::shape_mismatch,
         "augment expects (N, H, W, C) images, got " + shape_str(batch.images.shape));
  const int64_t n = batch.images.extent(0);
  const int h = int(batch.images.extent(1));
  const int w = int(batch.images.extent(2));
  const int c = int(batch.images.extent(3));
  const int64_t pixels = int64_t(h) * w;

  const bool photometric_ok = (c == 3);
  AugmentResult result;
  if (!photometric_ok && (cfg.hue_enabled() || cfg.saturation_enabled())) {
    if (cfg.strict_channels)
      fail(ErrorCode::invalid_argument,
           "augment: hue/saturation need 3 channels, input has " + std::to_string(c));
    result.notices.push_back("hue/saturation skipped: input has " +
                             std::to_string(c) + " channels");
  }

  result.batch.images = batch.images;
  result.batch.labels = batch.labels;

  for (int64_t s = 0; s < n; ++s) {
    float* img = result.batch.images.sample(s);
    if (cfg.horizontal_flip && rng_u01(draw_key(cfg, s, kFlip)) < 0.5)
      flip_horizontal(img, h, w, c);
    if (cfg.zoom_hi > 0.0)
      zoom_central(img, h, w, c,
                   rng_uniform(draw_key(cfg, s, kZoom), cfg.zoom_lo, cfg.zoom_hi));
    if (photometric_ok && cfg.hue_enabled())
      shift_hue(img, pixels,
                rng_uniform(draw_key(cfg, s, kHue), -cfg.hue_max_delta, cfg.hue_max_delta));
    if (photometric_ok && cfg.saturation_enabled())
      scale_saturation(img, pixels,
                       rng_uniform(draw_key(cfg, s, kSaturation), cfg.saturation_lo,
                                   cfg.saturation_hi));
    if (!cfg.generic && cfg.brightness_max_delta > 0.0)
      add_brightness(img, pixels * c,
                     rng_uniform(draw_key(cfg, s, kBrightness),
                                 -cfg.brightness_max_delta, cfg.brightness_max_delta));
    if (!(cfg.contrast_lo == 1.0 && cfg.contrast_hi == 1.0))
      scale_contrast(img, pixels, c,
                     rng_uniform(draw_key(cfg, s, kContrast), cfg.contrast_lo,
                                 cfg.contrast_hi));
    for (int64_t i = 0; i < pixels * c; ++i)
      img[i] = std::clamp(img[i], 0.0f, 1.0f);
  }
  return result;
}

void MixupSpec::validate() const {
  if (lambda < 0.0 || lambda > 1.0)
    fail(ErrorCode::invalid_argument, "mixup lambda must be in [0, 1]");
  if (layer < 0) fail(ErrorCode::invalid_argument, "mixup layer must be >= 0");
}

MixupResult mixup_pairs(const Tensor& representations,
                        const std::vector<int32_t>& labels, const MixupSpec& spec) {
  spec.validate();
  if (representations.rank() < 1 ||
      representations.extent(0) != int64_t(labels.size()))
    fail(ErrorCode::shape_mismatch, "mixup: representation/label count mismatch");

  std::map<int32_t, std::vector<int64_t>> by_class;
  for (size_t i = 0; i < labels.size(); ++i)
    by_class[labels[i]].push_back(int64_t(i));

  MixupResult result;
  std::vector<std::pair<int64_t, int64_t>> pairs;
  std::vector<int32_t> pair_labels;
  for (auto& [cls, idx] : by_class) {
    if (idx.size() < 2) {
      result.skipped_classes.push_back(cls);
      continue;
    }
    // Fisher-Yates keyed by (seed, class, position).
    for (size_t i = idx.size() - 1; i > 0; --i) {
      uint64_t j = rng_below(rng_key(spec.pairing_seed, uint64_t(cls), uint64_t(i)),
                             uint64_t(i) + 1);
      std::swap(idx[i], idx[size_t(j)]);
    }
    for (size_t i = 0; i + 1 < idx.size(); i += 2) {
      pairs.emplace_back(idx[i], idx[i + 1]);
      pair_labels.push_back(cls);
    }
  }

  std::vector<int64_t> shape = representations.shape;
  shape[0] = int64_t(pairs.size());
  result.mixed = Tensor(shape);
  result.labels = std::move(pair_labels);
  result.parents = pairs;
  const int64_t ss = representations.sample_size();
  const float lam = float(spec.lambda);
  const float inv = float(1.0 - spec.lambda);
  for (size_t p = 0; p < pairs.size(); ++p) {
    const float* a = representations.sample(pairs[p].first);
    const float* b = representations.sample(pairs[p].second);
    float* out = result.mixed.sample(int64_t(p));
    for (int64_t i = 0; i < ss; ++i) out[i] = lam * a[i] + inv * b[i];
  }
  return result;
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  float mx = std::max({r, g, b});
  float mn = std::min({r, g, b});
  float d = mx - mn;
  v = mx;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r)
    h = (g - b) / d;
  else if (mx == g)
    h = 2.0f + (b - r) / d;
  else
    h = 4.0f + (r - g) / d;
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  if (s <= 0.0f) {
    r = g = b = v;
    return;
  }
  float hh = (h - std::floor(h)) * 6.0f;
  int sector = std::min(5, int(hh));
  float f = hh - float(sector);
  float p = v * (1.0f - s);
  float q = v * (1.0f - s * f);
  float t = v * (1.0f - s * (1.0f - f));
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace gapkit
