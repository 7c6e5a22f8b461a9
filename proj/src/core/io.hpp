#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core/model.hpp"
#include "core/tensor.hpp"

namespace gapkit {

// A batch of images with integer labels. Images are (N, H, W, C) in [0, 1].
struct LabeledBatch {
  Tensor images;
  std::vector<int32_t> labels;

  int64_t size() const { return images.rank() ? images.extent(0) : 0; }
};

enum class Split : int { train = 0, test = 1 };

struct Dataset {
  LabeledBatch batch;
  int num_classes = 0;
  Split split = Split::train;

  int64_t size() const { return batch.size(); }
  void validate() const;
};

Dataset take_subset(const Dataset& data, const std::vector<int64_t>& indices);

// Model files: a directory holding model.json (human-readable manifest) and
// weights.bin (little-endian float32 blob addressed by the manifest's offset
// table, with a CRC-32 over the whole blob).
void save_model(const ModelSpec& model, const std::string& dir);
ModelSpec load_model(const std::string& dir);

// Dataset files: fixed little-endian header (magic, version, split, N, H, W,
// C, num_classes) followed by the float32 image block and int32 label block.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

// One trained model of a zoo with its hyperparameter point and measured gap.
struct ZooRecord {
  std::string model_path;  // relative to the zoo directory
  std::vector<std::pair<std::string, double>> config;  // ordered axes
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double gap = 0.0;  // train_accuracy - test_accuracy, exact
  uint64_t train_seed = 0;
  bool saturated = false;
  bool diverged = false;
  double saturation_target = 0.0;
  int epochs_run = 0;
  // Label-corruption mask applied to the shared train split for this model.
  std::vector<int64_t> corrupt_indices;
  std::vector<int32_t> corrupt_labels;
};

struct ZooManifest {
  std::vector<std::string> axes;  // fixed order, drives CMI grouping
  std::string train_data;         // relative paths
  std::string test_data;
  std::vector<ZooRecord> records;
};

void save_zoo_manifest(const ZooManifest& manifest, const std::string& path);
ZooManifest load_zoo_manifest(const std::string& path);

// Train labels as this model saw them: shared split + corruption mask.
std::vector<int32_t> training_labels(const Dataset& train, const ZooRecord& record);

uint32_t crc32(const void* data, size_t len);

}  // namespace gapkit
