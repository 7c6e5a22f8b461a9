#include "core/measures.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>

#include "core/error.hpp"
#include "core/linalg.hpp"
#include "core/rng.hpp"

namespace gapkit {

namespace {

constexpr double kSeparationEps = 1e-12;
constexpr double kGradNormEps = 1e-12;

// Strongest class other than `exclude` (first maximal wins ties).
int argmax_other(const float* row, int k, int exclude) {
  int best = -1;
  for (int j = 0; j < k; ++j) {
    if (j == exclude) continue;
    if (best < 0 || row[j] > row[best]) best = j;
  }
  return best;
}

bool row_correct(const float* row, int k, int label) {
  for (int j = 0; j < k; ++j)
    if (j != label && row[j] >= row[label]) return false;
  return true;
}

Tensor flatten_rows(const Tensor& t) {
  Tensor out = t;
  out.shape = {t.extent(0), t.sample_size()};
  return out;
}

// Valid max-pool with window min(4, spatial), stride 1, on (N, H, W, C).
Tensor maxpool4_stride1(const Tensor& t) {
  if (t.rank() != 4) return t;
  int n = int(t.extent(0)), h = int(t.extent(1)), w = int(t.extent(2)),
      c = int(t.extent(3));
  int ph = std::min(4, h), pw = std::min(4, w);
  int oh = h - ph + 1, ow = w - pw + 1;
  Tensor y({n, oh, ow, c});
  for (int s = 0; s < n; ++s) {
    const float* xs = t.sample(s);
    float* ys = y.sample(s);
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int ch = 0; ch < c; ++ch) {
          float best = xs[(int64_t(oy) * w + ox) * c + ch];
          for (int ky = 0; ky < ph; ++ky)
            for (int kx = 0; kx < pw; ++kx) {
              float v = xs[(int64_t(oy + ky) * w + (ox + kx)) * c + ch];
              if (v > best) best = v;
            }
          ys[(int64_t(oy) * ow + ox) * c + ch] = best;
        }
  }
  return y;
}

// PCA via the Gram matrix of centered rows; returns (rows, m) scores.
std::vector<double> pca_scores(const std::vector<double>& x, int64_t rows,
                               int64_t dims, int max_components, int64_t& out_dims) {
  std::vector<double> centered = x;
  for (int64_t d = 0; d < dims; ++d) {
    double mean = 0.0;
    for (int64_t r = 0; r < rows; ++r) mean += centered[r * dims + d];
    mean /= double(rows);
    for (int64_t r = 0; r < rows; ++r) centered[r * dims + d] -= mean;
  }
  std::vector<double> gram(size_t(rows) * rows, 0.0);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = i; j < rows; ++j) {
      double acc = 0.0;
      for (int64_t d = 0; d < dims; ++d)
        acc += centered[i * dims + d] * centered[j * dims + d];
      gram[i * rows + j] = acc;
      gram[j * rows + i] = acc;
    }
  std::vector<double> values, vectors;
  jacobi_eigh(gram, int(rows), values, vectors);
  double top = std::max(values.empty() ? 0.0 : values[0], 0.0);
  int64_t m = 0;
  while (m < rows && m < max_components && values[size_t(m)] > 1e-10 * std::max(top, 1e-30))
    ++m;
  if (m == 0) m = 1;
  out_dims = m;
  // scores = U * sqrt(lambda) == centered * V
  std::vector<double> scores(size_t(rows) * m, 0.0);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t ci = 0; ci < m; ++ci) {
      double lam = std::max(values[size_t(ci)], 0.0);
      scores[r * m + ci] = vectors[r * rows + ci] * std::sqrt(lam);
    }
  return scores;
}

std::vector<double> to_double_rows(const Tensor& t) {
  std::vector<double> rows(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) rows[i] = t.data[i];
  return rows;
}

nlohmann::ordered_json augment_config_json(const AugmentConfig& a) {
  nlohmann::ordered_json j;
  j["hue_max_delta"] = a.hue_max_delta;
  j["saturation_range"] = {a.saturation_lo, a.saturation_hi};
  j["brightness_max_delta"] = a.brightness_max_delta;
  j["contrast_range"] = {a.contrast_lo, a.contrast_hi};
  j["zoom_range"] = {a.zoom_lo, a.zoom_hi};
  j["horizontal_flip"] = a.horizontal_flip;
  j["generic"] = a.generic;
  j["seed"] = a.seed;
  return j;
}

}  // namespace

int resolve_layer(const ModelSpec& model, LayerSelector selector, int explicit_index) {
  switch (selector) {
    case LayerSelector::input:
      return 0;
    case LayerSelector::first_conv_act: {
      for (size_t i = 0; i < model.layers.size(); ++i) {
        if (model.layers[i].kind == LayerKind::conv2d) {
          int k = int(i) + 1;
          if (i + 1 < model.layers.size() &&
              model.layers[i + 1].kind == LayerKind::relu)
            k = int(i) + 2;
          return k;
        }
      }
      fail(ErrorCode::invalid_argument, "model has no convolutional layer");
    }
    case LayerSelector::third_from_last: {
      std::vector<int> keep;
      for (size_t i = 0; i < model.layers.size(); ++i)
        if (model.layers[i].kind != LayerKind::softmax) keep.push_back(int(i));
      if (keep.empty()) fail(ErrorCode::invalid_argument, "model has no non-softmax layer");
      size_t pos = keep.size() >= 3 ? keep.size() - 3 : 0;
      return keep[pos] + 1;
    }
    case LayerSelector::explicit_index: {
      if (explicit_index < 0 || explicit_index > model.logits_index())
        fail(ErrorCode::invalid_argument,
             "layer index " + std::to_string(explicit_index) + " out of range [0, " +
                 std::to_string(model.logits_index()) + "]");
      return explicit_index;
    }
  }
  fail(ErrorCode::invalid_argument, "bad layer selector");
}

double accuracy(const ModelSpec& model, const Tensor& images,
                const std::vector<int32_t>& labels) {
  const int64_t n = images.extent(0);
  if (n == 0) fail(ErrorCode::invalid_argument, "accuracy: empty batch");
  const int k = model.num_classes;
  int64_t correct = 0;
  const int64_t chunk = 256;
  std::vector<int64_t> sample_shape = images.shape;
  for (int64_t start = 0; start < n; start += chunk) {
    int64_t len = std::min(chunk, n - start);
    sample_shape[0] = len;
    Tensor part(sample_shape);
    std::memcpy(part.data.data(), images.sample(start),
                sizeof(float) * size_t(len * images.sample_size()));
    Tensor logits = forward(model, part).logits;
    for (int64_t s = 0; s < len; ++s)
      if (row_correct(logits.sample(s), k, labels[size_t(start + s)])) ++correct;
  }
  return double(correct) / double(n);
}

double accuracy(const ModelSpec& model, const Dataset& data) {
  return accuracy(model, data.batch.images, data.batch.labels);
}

int64_t default_sample_budget(int64_t n) {
  int64_t pct = (n + 99) / 100;
  return std::min(n, std::max<int64_t>(1000, pct));
}

std::vector<int64_t> sample_indices(int64_t n, int64_t count, uint64_t key) {
  if (count >= n) {
    // full budget: keep the set in dataset order
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t i = 0; i < count; ++i) {
    int64_t j = i + int64_t(rng_below(rng_key(key, uint64_t(i)), uint64_t(n - i)));
    std::swap(idx[size_t(i)], idx[size_t(j)]);
  }
  idx.resize(size_t(count));
  return idx;
}

ClusterIndexResult clustering_index(const std::vector<double>& points, int64_t rows,
                                    int64_t dims, const std::vector<int32_t>& labels,
                                    double p_norm, DbiAggregation aggregation,
                                    ClusterIndex index) {
  if (rows < 2 || int64_t(labels.size()) != rows)
    fail(ErrorCode::invalid_argument, "clustering_index: bad point set");

  std::map<int32_t, std::vector<int64_t>> by_class;
  for (int64_t r = 0; r < rows; ++r) by_class[labels[size_t(r)]].push_back(r);
  const int nc = int(by_class.size());
  if (nc < 2) fail(ErrorCode::degenerate, "clustering_index: needs >= 2 classes");

  std::vector<std::vector<int64_t>> members;
  members.reserve(nc);
  for (auto& [cls, m] : by_class) members.push_back(m);

  std::vector<std::vector<double>> centroid(nc, std::vector<double>(size_t(dims), 0.0));
  for (int ci = 0; ci < nc; ++ci) {
    for (int64_t r : members[ci])
      for (int64_t d = 0; d < dims; ++d) centroid[ci][size_t(d)] += points[r * dims + d];
    for (int64_t d = 0; d < dims; ++d) centroid[ci][size_t(d)] /= double(members[ci].size());
  }

  ClusterIndexResult result;
  switch (index) {
    case ClusterIndex::davies_bouldin: {
      std::vector<double> scatter(nc, 0.0);
      for (int ci = 0; ci < nc; ++ci) {
        double acc = 0.0;
        for (int64_t r : members[ci]) {
          for (int64_t d = 0; d < dims; ++d)
            acc += std::pow(std::abs(points[r * dims + d] - centroid[ci][size_t(d)]), p_norm);
        }
        scatter[ci] = std::pow(acc / double(members[ci].size()), 1.0 / p_norm);
      }
      double total = 0.0;
      int used_classes = 0;
      for (int ci = 0; ci < nc; ++ci) {
        double agg = aggregation == DbiAggregation::max ? -1.0 : 0.0;
        int terms = 0;
        for (int cj = 0; cj < nc; ++cj) {
          if (cj == ci) continue;
          double sep = 0.0;
          for (int64_t d = 0; d < dims; ++d)
            sep += std::pow(std::abs(centroid[ci][size_t(d)] - centroid[cj][size_t(d)]), p_norm);
          sep = std::pow(sep, 1.0 / p_norm);
          if (sep < kSeparationEps) {
            ++result.skipped_pairs;
            continue;
          }
          double ratio = (scatter[ci] + scatter[cj]) / sep;
          if (aggregation == DbiAggregation::max)
            agg = std::max(agg, ratio);
          else
            agg += ratio;
          ++terms;
        }
        if (terms == 0) {
          ++result.skipped_classes;
          continue;
        }
        total += aggregation == DbiAggregation::max ? agg : agg / double(terms);
        ++used_classes;
      }
      if (used_classes == 0)
        fail(ErrorCode::degenerate, "davies-bouldin: all centroid pairs coincide");
      result.value = total / double(used_classes);
      return result;
    }
    case ClusterIndex::silhouette: {
      // Euclidean; singleton-class samples contribute s = 0.
      std::vector<int> class_of(size_t(rows), 0);
      for (int ci = 0; ci < nc; ++ci)
        for (int64_t r : members[ci]) class_of[size_t(r)] = ci;
      auto dist = [&](int64_t a, int64_t b) {
        double acc = 0.0;
        for (int64_t d = 0; d < dims; ++d) {
          double diff = points[a * dims + d] - points[b * dims + d];
          acc += diff * diff;
        }
        return std::sqrt(acc);
      };
      double total = 0.0;
      for (int64_t r = 0; r < rows; ++r) {
        int ci = class_of[size_t(r)];
        if (members[ci].size() < 2) {
          ++result.skipped_classes;
          continue;
        }
        double a = 0.0;
        for (int64_t o : members[ci])
          if (o != r) a += dist(r, o);
        a /= double(members[ci].size() - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int cj = 0; cj < nc; ++cj) {
          if (cj == ci) continue;
          double mean = 0.0;
          for (int64_t o : members[cj]) mean += dist(r, o);
          b = std::min(b, mean / double(members[cj].size()));
        }
        double denom = std::max(a, b);
        total += denom > 0.0 ? (b - a) / denom : 0.0;
      }
      result.value = total / double(rows);
      return result;
    }
    case ClusterIndex::calinski_harabasz: {
      if (rows <= nc)
        fail(ErrorCode::degenerate, "calinski-harabasz: needs more samples than classes");
      std::vector<double> overall(size_t(dims), 0.0);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t d = 0; d < dims; ++d) overall[size_t(d)] += points[r * dims + d];
      for (int64_t d = 0; d < dims; ++d) overall[size_t(d)] /= double(rows);
      double between = 0.0, within = 0.0;
      for (int ci = 0; ci < nc; ++ci) {
        double sep = 0.0;
        for (int64_t d = 0; d < dims; ++d) {
          double diff = centroid[ci][size_t(d)] - overall[size_t(d)];
          sep += diff * diff;
        }
        between += double(members[ci].size()) * sep;
        for (int64_t r : members[ci])
          for (int64_t d = 0; d < dims; ++d) {
            double diff = points[r * dims + d] - centroid[ci][size_t(d)];
            within += diff * diff;
          }
      }
      if (within <= 0.0)
        fail(ErrorCode::degenerate, "calinski-harabasz: zero within-class scatter");
      result.value = (between / double(nc - 1)) / (within / double(rows - nc));
      return result;
    }
  }
  fail(ErrorCode::invalid_argument, "bad cluster index");
}

MeasureValue dbi_measure(const ModelSpec& model, const Dataset& data,
                         const DbiConfig& cfg) {
  const int64_t n = data.size();
  const int kappa = data.num_classes;
  if (cfg.num_batches < 1) fail(ErrorCode::invalid_argument, "dbi: num_batches < 1");
  int64_t batch = cfg.batch_size > 0 ? std::min(cfg.batch_size, n)
                                     : std::min<int64_t>(n, 24 * kappa);
  if (batch < kappa + 1)
    fail(ErrorCode::invalid_argument,
         "dbi: batch size " + std::to_string(batch) + " below required " +
             std::to_string(kappa + 1));
  const int k = resolve_layer(model, cfg.layer, cfg.explicit_layer);

  double total = 0.0;
  int skipped_pairs = 0, skipped_classes = 0, resamples = 0;
  for (int b = 0; b < cfg.num_batches; ++b) {
    std::vector<int64_t> idx;
    bool ok = false;
    for (int attempt = 0; attempt < 20; ++attempt) {
      idx = sample_indices(n, batch, rng_key(cfg.seed, uint64_t(b), uint64_t(attempt)));
      std::map<int32_t, int> counts;
      for (int64_t i : idx) ++counts[data.batch.labels[size_t(i)]];
      int rich = 0;
      for (auto& [cls, cnt] : counts)
        if (cnt >= 2) ++rich;
      if (rich >= 2) {
        ok = true;
        break;
      }
      ++resamples;
    }
    if (!ok)
      fail(ErrorCode::degenerate,
           "dbi: could not sample a batch with >= 2 classes of >= 2 samples");

    Dataset sub = take_subset(data, idx);
    Tensor reps = forward(model, sub.batch.images, {k}).trace.at(k);
    switch (cfg.reduction) {
      case DbiReduction::maxpool4:
        reps = flatten_rows(maxpool4_stride1(reps));
        break;
      case DbiReduction::none:
        reps = flatten_rows(reps);
        break;
      case DbiReduction::pca:
        reps = flatten_rows(reps);
        break;
    }
    int64_t rows = reps.extent(0), dims = reps.extent(1);
    std::vector<double> pts = to_double_rows(reps);
    if (cfg.reduction == DbiReduction::pca) {
      int64_t m = 0;
      pts = pca_scores(pts, rows, dims, cfg.pca_components, m);
      dims = m;
    }
    ClusterIndexResult r = clustering_index(pts, rows, dims, sub.batch.labels,
                                            cfg.p_norm, cfg.aggregation, cfg.index);
    total += r.value;
    skipped_pairs += r.skipped_pairs;
    skipped_classes += r.skipped_classes;
  }

  MeasureValue mv;
  switch (cfg.index) {
    case ClusterIndex::davies_bouldin: mv.measure_id = "dbi"; break;
    case ClusterIndex::silhouette: mv.measure_id = "silhouette"; break;
    case ClusterIndex::calinski_harabasz: mv.measure_id = "calinski_harabasz"; break;
  }
  mv.value = total / double(cfg.num_batches);
  mv.layer = k;
  mv.sample_budget = batch * cfg.num_batches;
  mv.seed = cfg.seed;
  mv.higher_means_larger_gap = cfg.index == ClusterIndex::davies_bouldin;
  mv.config["layer"] = k;
  mv.config["reduction"] = cfg.reduction == DbiReduction::maxpool4 ? "maxpool4"
                           : cfg.reduction == DbiReduction::pca    ? "pca"
                                                                   : "none";
  mv.config["aggregation"] = cfg.aggregation == DbiAggregation::mean ? "mean" : "max";
  mv.config["index"] = mv.measure_id;
  mv.config["batch_size"] = batch;
  mv.config["num_batches"] = cfg.num_batches;
  mv.config["p_norm"] = cfg.p_norm;
  mv.provenance["skipped_pairs"] = skipped_pairs;
  mv.provenance["skipped_classes"] = skipped_classes;
  mv.provenance["resamples"] = resamples;
  return mv;
}

MeasureValue mixup_measure(const ModelSpec& model, const Dataset& data,
                           const MixupSpec& spec, int64_t budget) {
  spec.validate();
  const int64_t n = data.size();
  if (budget <= 0) budget = default_sample_budget(n);
  budget = std::min(budget, n);
  std::vector<int64_t> idx =
      sample_indices(n, budget, rng_key(spec.pairing_seed,  0xb0d6e7ull));
  Dataset sub = take_subset(data, idx);

  Tensor reps = spec.layer == 0
                    ? sub.batch.images
                    : forward(model, sub.batch.images, {spec.layer}).trace.at(spec.layer);
  MixupResult mixed = mixup_pairs(reps, sub.batch.labels, spec);
  if (mixed.labels.empty())
    fail(ErrorCode::degenerate, "mixup: no class with >= 2 samples in the budget");

  Tensor logits = forward_from(model, spec.layer, mixed.mixed);
  std::map<int32_t, std::pair<int64_t, int64_t>> per_class;  // errors, count
  for (size_t p = 0; p < mixed.labels.size(); ++p) {
    auto& [errors, count] = per_class[mixed.labels[p]];
    if (!row_correct(logits.sample(int64_t(p)), model.num_classes, mixed.labels[p]))
      ++errors;
    ++count;
  }
  double sum = 0.0;
  nlohmann::ordered_json per_class_json;
  for (auto& [cls, ec] : per_class) {
    sum += double(ec.first) / double(ec.second);
    per_class_json[std::to_string(cls)] = {{"errors", ec.first}, {"pairs", ec.second}};
  }

  MeasureValue mv;
  mv.measure_id = spec.layer == 0 ? "label_wise_mixup" : "manifold_mixup";
  mv.value = sum / double(per_class.size());
  mv.layer = spec.layer;
  mv.sample_budget = budget;
  mv.seed = spec.pairing_seed;
  mv.higher_means_larger_gap = true;
  mv.config["lambda"] = spec.lambda;
  mv.config["layer"] = spec.layer;
  mv.provenance["pairs"] = mixed.labels.size();
  mv.provenance["skipped_classes"] = mixed.skipped_classes;
  mv.provenance["per_class"] = per_class_json;
  return mv;
}

MeasureValue margin_measure(const ModelSpec& model, const Dataset& data,
                            const MarginConfig& cfg, const AugmentConfig* aug,
                            const MixupSpec* mix) {
  if (cfg.perturbation == PerturbationSource::augment && aug == nullptr)
    fail(ErrorCode::invalid_argument, "margin: augment perturbation needs an augment config");
  if (cfg.perturbation == PerturbationSource::mixup && mix == nullptr)
    fail(ErrorCode::invalid_argument, "margin: mixup perturbation needs a mixup spec");
  if (mix != nullptr && mix->layer != cfg.layer)
    fail(ErrorCode::invalid_argument, "margin: mixup layer differs from margin layer");
  if (cfg.summary == MarginSummary::quantile_mean) {
    if (cfg.quantiles.empty())
      fail(ErrorCode::invalid_argument, "margin: empty quantile set");
    for (size_t i = 0; i < cfg.quantiles.size(); ++i) {
      if (cfg.quantiles[i] <= 0.0 || cfg.quantiles[i] >= 1.0)
        fail(ErrorCode::invalid_argument, "margin: quantiles must lie in (0, 1)");
      if (i > 0 && cfg.quantiles[i] <= cfg.quantiles[i - 1])
        fail(ErrorCode::invalid_argument, "margin: quantiles must be strictly increasing");
    }
  }

  const int64_t n = data.size();
  int64_t budget = cfg.budget > 0 ? std::min(cfg.budget, n) : default_sample_budget(n);
  std::vector<int64_t> idx = sample_indices(n, budget, rng_key(cfg.seed, 0x9a36ull));
  Dataset sub = take_subset(data, idx);
  const int k = cfg.layer;
  if (k < 0 || k > model.logits_index())
    fail(ErrorCode::invalid_argument, "margin: layer out of range");

  Tensor reps;
  std::vector<int32_t> labels;
  int pair_skipped_classes = 0;
  switch (cfg.perturbation) {
    case PerturbationSource::none: {
      reps = k == 0 ? sub.batch.images
                    : forward(model, sub.batch.images, {k}).trace.at(k);
      labels = sub.batch.labels;
      break;
    }
    case PerturbationSource::augment: {
      AugmentResult ar = augment(sub.batch, *aug);
      reps = k == 0 ? ar.batch.images
                    : forward(model, ar.batch.images, {k}).trace.at(k);
      labels = ar.batch.labels;
      break;
    }
    case PerturbationSource::mixup: {
      Tensor base = k == 0 ? sub.batch.images
                           : forward(model, sub.batch.images, {k}).trace.at(k);
      MixupResult mr = mixup_pairs(base, sub.batch.labels, *mix);
      if (mr.labels.empty())
        fail(ErrorCode::degenerate, "margin: mixup produced no pairs");
      reps = std::move(mr.mixed);
      labels = std::move(mr.labels);
      pair_skipped_classes = int(mr.skipped_classes.size());
      break;
    }
  }

  const int64_t count = reps.extent(0);
  Tensor logits = forward_from(model, k, reps);
  std::vector<std::pair<int, int>> pairs(static_cast<size_t>(count));
  for (int64_t s = 0; s < count; ++s) {
    int i = labels[size_t(s)];
    int j = argmax_other(logits.sample(s), model.num_classes, i);
    pairs[size_t(s)] = {i, j};
  }
  Tensor grads = logit_diff_grads(model, k, reps, pairs);

  const int64_t ss = reps.sample_size();
  std::vector<double> margins;
  margins.reserve(size_t(count));
  int64_t skipped = 0;
  for (int64_t s = 0; s < count; ++s) {
    const float* g = grads.sample(s);
    double norm = 0.0;
    for (int64_t i = 0; i < ss; ++i) norm += double(g[i]) * g[i];
    norm = std::sqrt(norm);
    if (norm < kGradNormEps) {
      ++skipped;
      continue;
    }
    const float* row = logits.sample(s);
    double diff = double(row[pairs[size_t(s)].first]) - double(row[pairs[size_t(s)].second]);
    margins.push_back(diff / norm);
  }
  if (skipped * 2 > count)
    fail(ErrorCode::degenerate, "margin: more than half the samples had vanishing gradients");

  double tv = 1.0;
  if (cfg.normalization == MarginNormalization::total_variation) {
    // sqrt of the summed per-coordinate variance over the sample set
    double total_var = 0.0;
    for (int64_t d = 0; d < ss; ++d) {
      double mean = 0.0;
      for (int64_t s = 0; s < count; ++s) mean += reps.sample(s)[d];
      mean /= double(count);
      double var = 0.0;
      for (int64_t s = 0; s < count; ++s) {
        double diff = double(reps.sample(s)[d]) - mean;
        var += diff * diff;
      }
      total_var += var / double(count);
    }
    tv = std::sqrt(total_var);
    if (tv < 1e-30)
      fail(ErrorCode::degenerate, "margin: representation has zero total variation");
    for (double& m : margins) m /= tv;
  }

  double summary = 0.0;
  if (cfg.summary == MarginSummary::quantile_mean) {
    for (double q : cfg.quantiles) summary += quantile(margins, q);
    summary /= double(cfg.quantiles.size());
  } else {
    for (double m : margins) summary += m;
    summary /= double(margins.size());
  }

  MeasureValue mv;
  switch (cfg.perturbation) {
    case PerturbationSource::none: mv.measure_id = "margin_summary"; break;
    case PerturbationSource::augment: mv.measure_id = "augment_margin_summary"; break;
    case PerturbationSource::mixup: mv.measure_id = "mixup_margin_summary"; break;
  }
  mv.value = -summary;
  mv.layer = k;
  mv.sample_budget = budget;
  mv.seed = cfg.seed;
  mv.higher_means_larger_gap = true;
  mv.config["layer"] = k;
  mv.config["perturbation"] = cfg.perturbation == PerturbationSource::none ? "none"
                              : cfg.perturbation == PerturbationSource::augment
                                  ? "augment"
                                  : "mixup";
  mv.config["summary"] =
      cfg.summary == MarginSummary::quantile_mean ? "quantile_mean" : "mean";
  if (cfg.summary == MarginSummary::quantile_mean) mv.config["quantiles"] = cfg.quantiles;
  mv.config["normalization"] =
      cfg.normalization == MarginNormalization::total_variation ? "total_variation"
                                                                : "none";
  if (aug) mv.config["augment"] = augment_config_json(*aug);
  if (mix) mv.config["mixup"] = {{"lambda", mix->lambda}, {"seed", mix->pairing_seed}};
  mv.provenance["samples"] = margins.size();
  mv.provenance["skipped_zero_gradient"] = skipped;
  mv.provenance["skipped_mixup_classes"] = pair_skipped_classes;
  if (cfg.normalization == MarginNormalization::total_variation)
    mv.provenance["total_variation"] = tv;
  return mv;
}

MeasureValue combined_dbi_mixup(const MeasureValue& dbi, const MeasureValue& mixup) {
  if (!dbi.higher_means_larger_gap || !mixup.higher_means_larger_gap)
    fail(ErrorCode::invalid_argument,
         "combined measure requires higher-means-larger-gap inputs");
  MeasureValue mv;
  mv.measure_id = "dbi_x_label_wise_mixup";
  mv.value = dbi.value * mixup.value;
  mv.layer = dbi.layer;
  mv.sample_budget = dbi.sample_budget + mixup.sample_budget;
  mv.seed = dbi.seed;
  mv.higher_means_larger_gap = true;
  mv.config["parents"] = {dbi.measure_id, mixup.measure_id};
  mv.provenance["parent_values"] = {{dbi.measure_id, dbi.value},
                                    {mixup.measure_id, mixup.value}};
  return mv;
}

MeasureValue norm_over_margin_baseline(const ModelSpec& model, const Dataset& data,
                                       NormKind kind, double margin_percentile,
                                       int64_t budget, uint64_t seed) {
  if (model.depth() < 1)
    fail(ErrorCode::invalid_argument, "norm baseline: model has no parameterized layer");
  const int64_t n = data.size();
  if (budget <= 0) budget = default_sample_budget(n);
  budget = std::min(budget, n);
  std::vector<int64_t> idx = sample_indices(n, budget, rng_key(seed, 0xf3a1ull));
  Dataset sub = take_subset(data, idx);

  Tensor logits = forward(model, sub.batch.images).logits;
  std::vector<double> margins(static_cast<size_t>(budget));
  for (int64_t s = 0; s < budget; ++s) {
    const float* row = logits.sample(s);
    int y = sub.batch.labels[size_t(s)];
    int j = argmax_other(row, model.num_classes, y);
    margins[size_t(s)] = double(row[y]) - double(row[j]);
  }
  double gamma = quantile(margins, margin_percentile / 100.0);

  double log_product = 0.0;
  int layers_used = 0;
  for (const LayerSpec& l : model.layers) {
    if (!l.parameterized()) continue;
    double nm = kind == NormKind::spectral ? spectral_norm(l.weight)
                                           : frobenius_norm(l.weight);
    log_product += 2.0 * std::log(std::max(nm, 1e-300));
    ++layers_used;
  }

  MeasureValue mv;
  mv.measure_id = kind == NormKind::spectral ? "prod_of_spec_over_margin"
                                             : "prod_of_fro_over_margin";
  mv.layer = -1;
  mv.sample_budget = budget;
  mv.seed = seed;
  mv.higher_means_larger_gap = true;
  mv.config["norm"] = kind == NormKind::spectral ? "spectral" : "frobenius";
  mv.config["margin_percentile"] = margin_percentile;
  mv.provenance["gamma"] = gamma;
  mv.provenance["layers"] = layers_used;
  if (gamma <= 0.0) {
    mv.value = std::numeric_limits<double>::infinity();
    mv.provenance["unsaturated"] = true;
  } else {
    mv.value = std::exp(log_product - 2.0 * std::log(gamma));
    mv.provenance["unsaturated"] = false;
  }
  return mv;
}

MeasureValue augment_performance(const ModelSpec& model, const Dataset& data,
                                 const AugmentConfig& aug, int64_t budget,
                                 uint64_t seed) {
  const int64_t n = data.size();
  if (budget <= 0) budget = default_sample_budget(n);
  budget = std::min(budget, n);
  std::vector<int64_t> idx = sample_indices(n, budget, rng_key(seed, 0xa76ull));
  Dataset sub = take_subset(data, idx);
  AugmentResult ar = augment(sub.batch, aug);
  Tensor logits = forward(model, ar.batch.images).logits;
  double ce = cross_entropy(logits, ar.batch.labels);

  MeasureValue mv;
  mv.measure_id = "augment_performance";
  mv.value = ce;
  mv.layer = 0;
  mv.sample_budget = budget;
  mv.seed = seed;
  mv.higher_means_larger_gap = true;
  mv.config["augment"] = augment_config_json(aug);
  for (const std::string& note : ar.notices) mv.provenance["notices"].push_back(note);
  return mv;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) fail(ErrorCode::invalid_argument, "quantile of empty sample");
  if (q < 0.0 || q > 1.0) fail(ErrorCode::invalid_argument, "quantile q outside [0, 1]");
  std::sort(values.begin(), values.end());
  double h = q * double(values.size() - 1);
  size_t lo = size_t(h);
  size_t hi = std::min(lo + 1, values.size() - 1);
  double frac = h - double(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace gapkit
