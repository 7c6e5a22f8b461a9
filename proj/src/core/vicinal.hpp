#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core/io.hpp"
#include "core/tensor.hpp"

namespace gapkit {

// Photometric/geometric augmentation recipe. Draws are keyed by
// (seed, sample index, op index), so outputs do not depend on batch
// partitioning. Ops are applied in the fixed order
// flip -> zoom -> hue -> saturation -> brightness -> contrast.
struct AugmentConfig {
  double hue_max_delta = 0.5;
  double saturation_lo = 0.6, saturation_hi = 1.2;
  double brightness_max_delta = 0.5;
  double contrast_lo = 0.7, contrast_hi = 1.0;
  double zoom_lo = 0.01, zoom_hi = 0.15;
  bool horizontal_flip = true;
  bool generic = false;  // restricts to contrast + flip + zoom
  bool strict_channels = false;
  uint64_t seed = 0;

  void validate() const;
  bool hue_enabled() const { return !generic && hue_max_delta > 0.0; }
  bool saturation_enabled() const {
    return !generic && !(saturation_lo == 1.0 && saturation_hi == 1.0);
  }
};

struct AugmentResult {
  LabeledBatch batch;
  std::vector<std::string> notices;
};

// Outputs are clipped to [0, 1]; labels pass through unchanged. Grayscale
// inputs skip hue/saturation with a recorded notice (error in strict mode).
AugmentResult augment(const LabeledBatch& batch, const AugmentConfig& cfg);

struct MixupSpec {
  double lambda = 0.5;  // mix coefficient, in [0, 1]
  int layer = 0;        // trace index; 0 = input
  uint64_t pairing_seed = 0;

  void validate() const;
};

struct MixupResult {
  Tensor mixed;                 // one row per formed pair, layer-k shape
  std::vector<int32_t> labels;  // the shared parent label
  std::vector<std::pair<int64_t, int64_t>> parents;
  std::vector<int> skipped_classes;  // classes with < 2 samples
};

// Label-wise mixup of representations: pairs are drawn within a class only
// (shuffle per class with the pairing seed, pair consecutive entries, drop
// the odd one out), mixed as lambda * a + (1 - lambda) * b.
MixupResult mixup_pairs(const Tensor& representations,
                        const std::vector<int32_t>& labels, const MixupSpec& spec);

// Reference RGB <-> HSV conversions (hue in [0, 1), cyclic).
void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v);
void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b);

}  // namespace gapkit
