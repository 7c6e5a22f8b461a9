#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "core/io.hpp"
#include "core/model.hpp"

namespace gapkit {

// Procedural image generator: one parametric shape family per class
// (disc, ring, bar, cross, square, frame, diagonal cross, dot grid) with
// position/scale/rotation/color/noise nuisances.
struct SynthConfig {
  int image_size = 32;
  double scale_lo = 0.5, scale_hi = 0.85;  // radius as fraction of half-extent
  double position_jitter = 0.15;           // center offset, fraction of half-extent
  double rotation_max_deg = 15.0;
  double color_jitter = 0.25;
  double noise_sigma = 0.03;

  static constexpr int kShapeVocabulary = 8;

  void validate() const;
};

Dataset generate_dataset(const SynthConfig& cfg, int num_classes, int64_t count,
                         uint64_t seed, Split split);

// Reassigns exactly floor(fraction * N) labels to a uniformly drawn
// *different* class. The touched indices and their new labels are reported
// for the zoo record.
Dataset corrupt_labels(const Dataset& data, double fraction, uint64_t seed,
                       std::vector<int64_t>* out_indices,
                       std::vector<int32_t>* out_labels);

struct TrainSpec {
  double learning_rate = 0.05;
  double momentum = 0.9;
  int batch_size = 32;
  double weight_decay = 0.0;
  int epoch_cap = 200;
  double target_train_accuracy = 0.99;
  std::vector<int> lr_decay_epochs;
  double lr_decay_factor = 0.1;
  uint64_t seed = 0;
};

struct TrainOutcome {
  bool saturated = false;
  bool diverged = false;
  int epochs_run = 0;
  double train_accuracy = 0.0;
};

// VGG-like template: depth blocks of conv3x3(width * 2^b) + relu + maxpool2,
// then global average pool, optional dropout, dense head. He-normal init
// keyed by (init_seed, layer, element).
ModelSpec make_vgg_like(int width, int depth, double dropout,
                        const std::vector<int64_t>& input_shape, int num_classes,
                        uint64_t init_seed);

// Plain SGD with momentum; stops at the saturation target or the epoch cap.
// Divergence (non-finite loss) flags the outcome instead of throwing.
TrainOutcome train_model(ModelSpec& model, const Tensor& images,
                         const std::vector<int32_t>& labels, const TrainSpec& spec);

struct ZooConfig {
  int num_classes = 3;
  int64_t train_samples = 240;
  int64_t test_samples = 720;
  uint64_t data_seed = 7;
  SynthConfig synth;

  // hyperparameter grid, axis order fixed for CMI grouping
  std::vector<int> widths = {8, 16};
  std::vector<int> depths = {1, 2};
  std::vector<int> batch_sizes = {32};
  std::vector<double> dropouts = {0.0};
  std::vector<double> weight_decays = {0.0};
  std::vector<double> random_label_fractions = {0.0};

  TrainSpec train;
  uint64_t zoo_seed = 1;

  void validate() const;
  int64_t grid_size() const;
};

using ProgressFn = std::function<void(const std::string&)>;

// Builds datasets, trains every grid point, writes models/ and zoo.json
// under out_dir. Refuses an existing directory unless force is set.
ZooManifest build_zoo(const ZooConfig& cfg, const std::string& out_dir,
                      int parallelism, bool force, const ProgressFn& progress = {});

ZooConfig zoo_config_from_json(const nlohmann::ordered_json& j);

}  // namespace gapkit
