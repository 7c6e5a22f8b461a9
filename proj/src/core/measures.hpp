#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "core/io.hpp"
#include "core/model.hpp"
#include "core/vicinal.hpp"

namespace gapkit {

// One complexity-measure scalar with full provenance.
struct MeasureValue {
  std::string measure_id;
  double value = 0.0;
  int layer = -1;
  int64_t sample_budget = 0;
  uint64_t seed = 0;
  nlohmann::ordered_json config;      // snapshot of the effective config
  bool higher_means_larger_gap = true;
  nlohmann::ordered_json provenance;  // skip counters, notices, parents
};

enum class LayerSelector { input, first_conv_act, third_from_last, explicit_index };

// Trace index for a selector: `first_conv_act` is the output of the first
// convolution's activation (the relu following it, when present);
// `third_from_last` counts entries from the end of the layer list with
// softmax excluded.
int resolve_layer(const ModelSpec& model, LayerSelector selector,
                  int explicit_index = 0);

// Fraction of samples whose true-class logit strictly exceeds every other
// logit; ties count as errors.
double accuracy(const ModelSpec& model, const Tensor& images,
                const std::vector<int32_t>& labels);
double accuracy(const ModelSpec& model, const Dataset& data);

// Default measure sample budget: max(1000, ceil(0.01 * n)), capped at n.
int64_t default_sample_budget(int64_t n);

// Deterministic sampling of `count` distinct indices from [0, n); a full
// budget (count >= n) keeps dataset order.
std::vector<int64_t> sample_indices(int64_t n, int64_t count, uint64_t key);

enum class DbiReduction { maxpool4, pca, none };
enum class DbiAggregation { mean, max };
enum class ClusterIndex { davies_bouldin, silhouette, calinski_harabasz };

struct DbiConfig {
  LayerSelector layer = LayerSelector::first_conv_act;
  int explicit_layer = 0;
  DbiReduction reduction = DbiReduction::maxpool4;
  int pca_components = 64;
  DbiAggregation aggregation = DbiAggregation::mean;
  ClusterIndex index = ClusterIndex::davies_bouldin;
  int64_t batch_size = 0;  // 0 = min(N, 24 * num_classes)
  int num_batches = 8;
  double p_norm = 2.0;
  uint64_t seed = 0;
};

struct ClusterIndexResult {
  double value = 0.0;
  int skipped_pairs = 0;    // centroid separation below epsilon
  int skipped_classes = 0;  // classes with no valid pairwise term
};

// Index on a labeled point set (rows x dims, row-major). For
// davies_bouldin: S_i = (mean ||x - mu_i||_p^p)^(1/p), M_ij = ||mu_i -
// mu_j||_p, per-class term is max (or mean) over j != i of (S_i + S_j) /
// M_ij, averaged over classes.
ClusterIndexResult clustering_index(const std::vector<double>& points, int64_t rows,
                                    int64_t dims, const std::vector<int32_t>& labels,
                                    double p_norm, DbiAggregation aggregation,
                                    ClusterIndex index);

MeasureValue dbi_measure(const ModelSpec& model, const Dataset& data,
                         const DbiConfig& cfg);

// Label-wise mixup error: mixed pairs are built within each class, the
// 0-1 error is taken per class and averaged over classes.
MeasureValue mixup_measure(const ModelSpec& model, const Dataset& data,
                           const MixupSpec& spec, int64_t budget = 0);

enum class PerturbationSource { none, augment, mixup };
enum class MarginSummary { quantile_mean, mean };
enum class MarginNormalization { total_variation, none };

struct MarginConfig {
  int layer = 0;  // trace index; 0 = input
  PerturbationSource perturbation = PerturbationSource::none;
  MarginSummary summary = MarginSummary::quantile_mean;
  std::vector<double> quantiles = {0.25, 0.5, 0.75};
  MarginNormalization normalization = MarginNormalization::total_variation;
  int64_t budget = 0;  // 0 = default rule
  uint64_t seed = 0;
};

// First-order margin distance per sample: (f[i] - f[j]) / ||grad_i -
// grad_j||_2 with i the true class and j the strongest other class,
// normalized by the total variation of the representation, summarized and
// negated so that higher values mean larger predicted gap.
MeasureValue margin_measure(const ModelSpec& model, const Dataset& data,
                            const MarginConfig& cfg,
                            const AugmentConfig* aug = nullptr,
                            const MixupSpec* mix = nullptr);

MeasureValue combined_dbi_mixup(const MeasureValue& dbi, const MeasureValue& mixup);

enum class NormKind { spectral, frobenius };

// (prod_i ||W_i||^2) / gamma^2 with gamma the margin-distribution
// percentile of f[y] - max_{j!=y} f[j]. gamma <= 0 yields +inf with an
// `unsaturated` provenance flag.
MeasureValue norm_over_margin_baseline(const ModelSpec& model, const Dataset& data,
                                       NormKind kind, double margin_percentile = 10.0,
                                       int64_t budget = 0, uint64_t seed = 0);

// Mean categorical cross-entropy on augmented samples.
MeasureValue augment_performance(const ModelSpec& model, const Dataset& data,
                                 const AugmentConfig& aug, int64_t budget = 0,
                                 uint64_t seed = 0);

// Linear-interpolation quantile of an unsorted sample, q in [0, 1].
double quantile(std::vector<double> values, double q);

}  // namespace gapkit
