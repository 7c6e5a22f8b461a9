#include "core/zoo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <mutex>
#include <numeric>
#include <thread>

#include "core/error.hpp"
#include "core/measures.hpp"
#include "core/rng.hpp"

namespace gapkit {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

enum Field : uint64_t {
  kCenterX = 1,
  kCenterY,
  kScale,
  kRotation,
  kColorR,
  kColorG,
  kColorB,
  kNoise,
};

double rect_sdf(double x, double y, double hx, double hy) {
  return std::max(std::abs(x) - hx, std::abs(y) - hy);
}

// Signed distance (pixels) of shape family `shape` with radius r at local
// coordinates (x, y).
double shape_sdf(int shape, double x, double y, double r) {
  const double len = std::sqrt(x * x + y * y);
  switch (shape) {
    case 0:  // disc
      return len - r;
    case 1:  // ring
      return std::abs(len - 0.85 * r) - 0.22 * r;
    case 2:  // bar
      return rect_sdf(x, y, r, 0.28 * r);
    case 3:  // upright cross
      return std::min(rect_sdf(x, y, r, 0.26 * r), rect_sdf(x, y, 0.26 * r, r));
    case 4:  // solid square
      return rect_sdf(x, y, 0.78 * r, 0.78 * r);
    case 5:  // square frame
      return std::abs(rect_sdf(x, y, 0.78 * r, 0.78 * r)) - 0.17 * r;
    case 6: {  // diagonal cross
      const double c = std::cos(M_PI / 4), s = std::sin(M_PI / 4);
      double xr = c * x - s * y, yr = s * x + c * y;
      return std::min(rect_sdf(xr, yr, r, 0.26 * r), rect_sdf(xr, yr, 0.26 * r, r));
    }
    default: {  // 2x2 dot grid
      double d = 1e30;
      for (int sx = -1; sx <= 1; sx += 2)
        for (int sy = -1; sy <= 1; sy += 2) {
          double dx = x - sx * 0.55 * r, dy = y - sy * 0.55 * r;
          d = std::min(d, std::sqrt(dx * dx + dy * dy) - 0.32 * r);
        }
      return d;
    }
  }
}

constexpr double kBackground = 0.1;

}  // namespace

void SynthConfig::validate() const {
  if (image_size < 8) fail(ErrorCode::invalid_argument, "synth: image_size < 8");
  if (scale_lo > scale_hi || scale_lo <= 0 || scale_hi > 1)
    fail(ErrorCode::invalid_argument, "synth: scale range must satisfy 0 < lo <= hi <= 1");
  if (position_jitter < 0 || position_jitter > 0.5)
    fail(ErrorCode::invalid_argument, "synth: position_jitter outside [0, 0.5]");
  if (noise_sigma < 0 || color_jitter < 0 || rotation_max_deg < 0)
    fail(ErrorCode::invalid_argument, "synth: negative nuisance range");
}

Dataset generate_dataset(const SynthConfig& cfg, int num_classes, int64_t count,
                         uint64_t seed, Split split) {
  cfg.validate();
  if (num_classes < 1 || num_classes > SynthConfig::kShapeVocabulary)
    fail(ErrorCode::invalid_argument,
         "num_classes must be in [1, " +
             std::to_string(SynthConfig::kShapeVocabulary) + "]");
  if (count < num_classes)
    fail(ErrorCode::invalid_argument, "dataset needs at least one sample per class");

  const int hw = cfg.image_size;
  const double half = hw / 2.0;
  Dataset data;
  data.num_classes = num_classes;
  data.split = split;
  data.batch.images = Tensor({count, hw, hw, 3});
  data.batch.labels.resize(size_t(count));

  for (int64_t s = 0; s < count; ++s) {
    const int cls = int(s % num_classes);
    data.batch.labels[size_t(s)] = cls;

    auto draw = [&](uint64_t field) { return rng_key(seed, uint64_t(s), field); };
    const double cx = half + rng_uniform(draw(kCenterX), -cfg.position_jitter,
                                         cfg.position_jitter) * half;
    const double cy = half + rng_uniform(draw(kCenterY), -cfg.position_jitter,
                                         cfg.position_jitter) * half;
    const double radius =
        rng_uniform(draw(kScale), cfg.scale_lo, cfg.scale_hi) * (half - 2.0);
    const double theta = rng_uniform(draw(kRotation), -cfg.rotation_max_deg,
                                     cfg.rotation_max_deg) * M_PI / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double fg[3] = {
        0.9 - cfg.color_jitter * rng_u01(draw(kColorR)),
        0.9 - cfg.color_jitter * rng_u01(draw(kColorG)),
        0.9 - cfg.color_jitter * rng_u01(draw(kColorB)),
    };

    float* img = data.batch.images.sample(s);
    for (int y = 0; y < hw; ++y) {
      for (int x = 0; x < hw; ++x) {
        const double px = (x + 0.5) - cx, py = (y + 0.5) - cy;
        const double lx = ct * px + st * py, ly = -st * px + ct * py;
        const double d = shape_sdf(cls, lx, ly, radius);
        const double alpha = std::clamp(0.5 - d, 0.0, 1.0);  // 1px soft edge
        for (int ch = 0; ch < 3; ++ch) {
          double v = kBackground + alpha * (fg[ch] - kBackground);
          if (cfg.noise_sigma > 0)
            v += cfg.noise_sigma *
                 rng_normal(rng_key(seed, uint64_t(s), kNoise,
                                    uint64_t(int64_t(y) * hw * 3 + x * 3 + ch)));
          img[(int64_t(y) * hw + x) * 3 + ch] = float(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  data.validate();
  return data;
}

Dataset corrupt_labels(const Dataset& data, double fraction, uint64_t seed,
                       std::vector<int64_t>* out_indices,
                       std::vector<int32_t>* out_labels) {
  if (fraction < 0.0 || fraction >= 1.0)
    fail(ErrorCode::invalid_argument, "corrupt fraction must be in [0, 1)");
  Dataset out = data;
  const int64_t n = data.size();
  const int64_t count = int64_t(fraction * double(n));
  std::vector<int64_t> idx = sample_indices(n, count, rng_key(seed, 0xc0ull));
  std::sort(idx.begin(), idx.end());
  std::vector<int32_t> labels(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    int32_t orig = data.batch.labels[size_t(idx[size_t(i)])];
    // uniform over the other classes, never the original
    int32_t shift = 1 + int32_t(rng_below(rng_key(seed, 0x1a8ull, uint64_t(i)),
                                          uint64_t(data.num_classes - 1)));
    labels[size_t(i)] = (orig + shift) % data.num_classes;
    out.batch.labels[size_t(idx[size_t(i)])] = labels[size_t(i)];
  }
  if (out_indices) *out_indices = std::move(idx);
  if (out_labels) *out_labels = std::move(labels);
  return out;
}

ModelSpec make_vgg_like(int width, int depth, double dropout,
                        const std::vector<int64_t>& input_shape, int num_classes,
                        uint64_t init_seed) {
  if (width < 1 || depth < 1)
    fail(ErrorCode::invalid_argument, "vgg template: width and depth must be >= 1");
  if (input_shape.size() != 3)
    fail(ErrorCode::invalid_argument, "vgg template expects (H, W, C) input");

  ModelSpec model;
  model.input_shape = input_shape;
  model.num_classes = num_classes;
  int in_ch = int(input_shape[2]);
  for (int b = 0; b < depth; ++b) {
    int out_ch = width << b;
    model.layers.push_back(make_conv2d(3, 3, in_ch, out_ch, 1, Padding::same));
    model.layers.push_back(make_relu());
    model.layers.push_back(make_maxpool(2, 2, 2, Padding::valid));
    in_ch = out_ch;
  }
  model.layers.push_back(make_globalavgpool());
  if (dropout > 0.0) model.layers.push_back(make_dropout(float(dropout)));
  model.layers.push_back(make_dense(in_ch, num_classes));

  // He-normal init, zero biases
  for (size_t li = 0; li < model.layers.size(); ++li) {
    LayerSpec& l = model.layers[li];
    if (!l.parameterized()) continue;
    int fan_in = l.kind == LayerKind::conv2d
                     ? l.kernel_h * l.kernel_w * l.in_channels
                     : l.in_features;
    double std = std::sqrt(2.0 / double(fan_in));
    for (int64_t i = 0; i < l.weight.numel(); ++i)
      l.weight.data[size_t(i)] =
          float(std * rng_normal(rng_key(init_seed, uint64_t(li), uint64_t(i))));
  }
  model.validate();
  return model;
}

TrainOutcome train_model(ModelSpec& model, const Tensor& images,
                         const std::vector<int32_t>& labels, const TrainSpec& spec) {
  const int64_t n = images.extent(0);
  if (n < 1 || int64_t(labels.size()) != n)
    fail(ErrorCode::invalid_argument, "train: image/label mismatch");
  if (spec.batch_size < 1) fail(ErrorCode::invalid_argument, "train: batch_size < 1");

  std::vector<Tensor> velocity_w(model.layers.size());
  std::vector<Tensor> velocity_b(model.layers.size());
  for (size_t li = 0; li < model.layers.size(); ++li) {
    if (!model.layers[li].parameterized()) continue;
    velocity_w[li] = Tensor(model.layers[li].weight.shape);
    if (!model.layers[li].bias.empty())
      velocity_b[li] = Tensor(model.layers[li].bias.shape);
  }

  TrainOutcome outcome;
  double lr = spec.learning_rate;
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<int64_t> batch_shape = images.shape;

  for (int epoch = 0; epoch < spec.epoch_cap; ++epoch) {
    for (int decay_at : spec.lr_decay_epochs)
      if (epoch == decay_at) lr *= spec.lr_decay_factor;

    // per-epoch shuffle keyed by (seed, epoch, position)
    for (int64_t i = n - 1; i > 0; --i) {
      int64_t j = int64_t(
          rng_below(rng_key(spec.seed, uint64_t(epoch), uint64_t(i)), uint64_t(i + 1)));
      std::swap(order[size_t(i)], order[size_t(j)]);
    }

    for (int64_t start = 0; start < n; start += spec.batch_size) {
      const int64_t len = std::min<int64_t>(spec.batch_size, n - start);
      batch_shape[0] = len;
      Tensor batch(batch_shape);
      std::vector<int32_t> batch_labels(static_cast<size_t>(len));
      const int64_t ss = images.sample_size();
      for (int64_t i = 0; i < len; ++i) {
        int64_t src = order[size_t(start + i)];
        std::memcpy(batch.sample(i), images.sample(src), sizeof(float) * size_t(ss));
        batch_labels[size_t(i)] = labels[size_t(src)];
      }

      uint64_t step_seed = rng_key(spec.seed, uint64_t(epoch), uint64_t(start), 0xd207ull);
      std::vector<LayerGrads> grads;
      double loss = 0.0;
      try {
        grads = grad_wrt_weights(model, batch, batch_labels, step_seed, nullptr, &loss);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::numeric) {
          outcome.diverged = true;
          outcome.epochs_run = epoch + 1;
          outcome.train_accuracy = 0.0;
          return outcome;
        }
        throw;
      }

      for (size_t li = 0; li < model.layers.size(); ++li) {
        LayerSpec& l = model.layers[li];
        if (!l.parameterized()) continue;
        float* w = l.weight.data.data();
        const float* g = grads[li].weight.data.data();
        float* v = velocity_w[li].data.data();
        for (int64_t i = 0; i < l.weight.numel(); ++i) {
          v[i] = float(spec.momentum * v[i] - lr * (g[i] + spec.weight_decay * w[i]));
          w[i] += v[i];
        }
        if (!l.bias.empty()) {
          float* bw = l.bias.data.data();
          const float* bg = grads[li].bias.data.data();
          float* bv = velocity_b[li].data.data();
          for (int64_t i = 0; i < l.bias.numel(); ++i) {
            bv[i] = float(spec.momentum * bv[i] - lr * bg[i]);
            bw[i] += bv[i];
          }
        }
      }
    }

    outcome.epochs_run = epoch + 1;
    outcome.train_accuracy = accuracy(model, images, labels);
    if (outcome.train_accuracy >= spec.target_train_accuracy) {
      outcome.saturated = true;
      break;
    }
  }
  return outcome;
}

void ZooConfig::validate() const {
  synth.validate();
  if (num_classes < 2) fail(ErrorCode::invalid_argument, "zoo: num_classes < 2");
  if (train_samples < num_classes || test_samples < 1)
    fail(ErrorCode::invalid_argument, "zoo: sample counts too small");
  if (widths.empty() || depths.empty() || batch_sizes.empty() || dropouts.empty() ||
      weight_decays.empty() || random_label_fractions.empty())
    fail(ErrorCode::invalid_argument, "zoo: every grid axis needs at least one value");
  if (!(train.target_train_accuracy > 0.5 && train.target_train_accuracy <= 1.0))
    fail(ErrorCode::invalid_argument, "zoo: saturation target must be in (0.5, 1]");
  for (double f : random_label_fractions)
    if (f < 0.0 || f >= 1.0)
      fail(ErrorCode::invalid_argument, "zoo: random label fraction outside [0, 1)");
}

int64_t ZooConfig::grid_size() const {
  return int64_t(widths.size()) * depths.size() * batch_sizes.size() *
         dropouts.size() * weight_decays.size() * random_label_fractions.size();
}

ZooManifest build_zoo(const ZooConfig& cfg, const std::string& out_dir,
                      int parallelism, bool force, const ProgressFn& progress) {
  cfg.validate();
  if (fs::exists(out_dir)) {
    if (!force)
      fail(ErrorCode::io, "zoo directory " + out_dir + " already exists (use force)");
    fs::remove_all(out_dir);
  }
  fs::create_directories(fs::path(out_dir) / "models");

  auto report = [&](const std::string& line) {
    if (progress) progress(line);
  };

  report("generating datasets");
  Dataset train_data = generate_dataset(cfg.synth, cfg.num_classes, cfg.train_samples,
                                        rng_key(cfg.data_seed, 0), Split::train);
  Dataset test_data = generate_dataset(cfg.synth, cfg.num_classes, cfg.test_samples,
                                       rng_key(cfg.data_seed, 1), Split::test);
  save_dataset(train_data, (fs::path(out_dir) / "train.gkds").string());
  save_dataset(test_data, (fs::path(out_dir) / "test.gkds").string());

  struct GridPoint {
    int width, depth, batch_size;
    double dropout, weight_decay, random_label_fraction;
  };
  std::vector<GridPoint> grid;
  for (int w : cfg.widths)
    for (int d : cfg.depths)
      for (int bs : cfg.batch_sizes)
        for (double dr : cfg.dropouts)
          for (double wd : cfg.weight_decays)
            for (double rlf : cfg.random_label_fractions)
              grid.push_back({w, d, bs, dr, wd, rlf});

  std::vector<ZooRecord> records(grid.size());
  std::atomic<size_t> next{0};
  std::atomic<size_t> done{0};
  std::mutex progress_mutex;
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto worker = [&]() {
    for (;;) {
      size_t g = next.fetch_add(1);
      if (g >= grid.size()) return;
      try {
        const GridPoint& p = grid[g];
        const uint64_t model_seed = rng_key(cfg.zoo_seed, uint64_t(g));

        ZooRecord rec;
        char name[32];
        std::snprintf(name, sizeof(name), "model_%03zu", g);
        rec.model_path = std::string("models/") + name;
        rec.config = {{"width", double(p.width)},
                      {"depth", double(p.depth)},
                      {"batch_size", double(p.batch_size)},
                      {"dropout", p.dropout},
                      {"weight_decay", p.weight_decay},
                      {"random_label_fraction", p.random_label_fraction}};
        rec.train_seed = model_seed;
        rec.saturation_target = cfg.train.target_train_accuracy;

        std::vector<int32_t> labels = train_data.batch.labels;
        if (p.random_label_fraction > 0.0) {
          corrupt_labels(train_data, p.random_label_fraction,
                         rng_key(model_seed, 0xc027ull), &rec.corrupt_indices,
                         &rec.corrupt_labels);
          for (size_t i = 0; i < rec.corrupt_indices.size(); ++i)
            labels[size_t(rec.corrupt_indices[i])] = rec.corrupt_labels[i];
        }

        ModelSpec model = make_vgg_like(p.width, p.depth, p.dropout,
                                        train_data.batch.images.shape.size() == 4
                                            ? std::vector<int64_t>{train_data.batch.images.shape[1],
                                                                   train_data.batch.images.shape[2],
                                                                   train_data.batch.images.shape[3]}
                                            : std::vector<int64_t>{},
                                        cfg.num_classes, rng_key(model_seed, 0x1417ull));
        TrainSpec train = cfg.train;
        train.batch_size = p.batch_size;
        train.weight_decay = p.weight_decay;
        train.seed = rng_key(model_seed, 0x73a1ull);

        TrainOutcome outcome = train_model(model, train_data.batch.images, labels, train);
        rec.diverged = outcome.diverged;
        rec.epochs_run = outcome.epochs_run;
        rec.train_accuracy = outcome.diverged ? 0.0 : accuracy(model, train_data.batch.images, labels);
        rec.test_accuracy = outcome.diverged ? 0.0 : accuracy(model, test_data);
        rec.gap = rec.train_accuracy - rec.test_accuracy;
        rec.saturated = !outcome.diverged &&
                        rec.train_accuracy >= cfg.train.target_train_accuracy;

        save_model(model, (fs::path(out_dir) / rec.model_path).string());
        records[g] = std::move(rec);

        size_t finished = done.fetch_add(1) + 1;
        std::lock_guard<std::mutex> lock(progress_mutex);
        char line[160];
        std::snprintf(line, sizeof(line),
                      "[%zu/%zu] %s width=%d depth=%d rlf=%.2f train=%.4f test=%.4f%s",
                      finished, grid.size(), name, p.width, p.depth,
                      p.random_label_fraction, records[g].train_accuracy,
                      records[g].test_accuracy,
                      records[g].saturated ? "" : " (flagged)");
        report(line);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  int threads = std::max(1, parallelism);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  ZooManifest manifest;
  manifest.axes = {"width",   "depth",        "batch_size",
                   "dropout", "weight_decay", "random_label_fraction"};
  manifest.train_data = "train.gkds";
  manifest.test_data = "test.gkds";
  manifest.records = std::move(records);
  save_zoo_manifest(manifest, (fs::path(out_dir) / "zoo.json").string());
  return manifest;
}

namespace {

[[noreturn]] void config_fail(const std::string& path, const std::string& why) {
  fail(ErrorCode::format, "zoo config: " + path + ": " + why);
}

template <class T>
T field_or(const ordered_json& j, const std::string& path, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const ordered_json::exception&) {
    config_fail(path + "." + key, "wrong type");
  }
}

}  // namespace

ZooConfig zoo_config_from_json(const ordered_json& j) {
  ZooConfig cfg;
  if (!j.is_object()) config_fail("(root)", "expected an object");

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    cfg.num_classes = field_or(d, "dataset", "classes", cfg.num_classes);
    cfg.train_samples = field_or<int64_t>(d, "dataset", "train_samples", cfg.train_samples);
    cfg.test_samples = field_or<int64_t>(d, "dataset", "test_samples", cfg.test_samples);
    cfg.data_seed = field_or<uint64_t>(d, "dataset", "seed", cfg.data_seed);
    cfg.synth.image_size = field_or(d, "dataset", "image_size", cfg.synth.image_size);
    if (d.contains("synth")) {
      const auto& s = d.at("synth");
      auto range = [&](const char* key, double& lo, double& hi) {
        if (!s.contains(key)) return;
        auto v = s.at(key);
        if (!v.is_array() || v.size() != 2)
          config_fail(std::string("dataset.synth.") + key, "expected [lo, hi]");
        lo = v[0].get<double>();
        hi = v[1].get<double>();
      };
      range("scale_range", cfg.synth.scale_lo, cfg.synth.scale_hi);
      cfg.synth.position_jitter =
          field_or(s, "dataset.synth", "position_jitter", cfg.synth.position_jitter);
      cfg.synth.rotation_max_deg =
          field_or(s, "dataset.synth", "rotation_max_deg", cfg.synth.rotation_max_deg);
      cfg.synth.color_jitter =
          field_or(s, "dataset.synth", "color_jitter", cfg.synth.color_jitter);
      cfg.synth.noise_sigma =
          field_or(s, "dataset.synth", "noise_sigma", cfg.synth.noise_sigma);
    }
  }

  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    cfg.widths = field_or(g, "grid", "width", cfg.widths);
    cfg.depths = field_or(g, "grid", "depth", cfg.depths);
    cfg.batch_sizes = field_or(g, "grid", "batch_size", cfg.batch_sizes);
    cfg.dropouts = field_or(g, "grid", "dropout", cfg.dropouts);
    cfg.weight_decays = field_or(g, "grid", "weight_decay", cfg.weight_decays);
    cfg.random_label_fractions =
        field_or(g, "grid", "random_label_fraction", cfg.random_label_fractions);
    for (size_t i = 0; i < cfg.widths.size(); ++i)
      if (cfg.widths[i] < 1) config_fail("grid.width[" + std::to_string(i) + "]",
                                         "expected a positive integer");
    for (size_t i = 0; i < cfg.depths.size(); ++i)
      if (cfg.depths[i] < 1) config_fail("grid.depth[" + std::to_string(i) + "]",
                                         "expected a positive integer");
    for (size_t i = 0; i < cfg.batch_sizes.size(); ++i)
      if (cfg.batch_sizes[i] < 1)
        config_fail("grid.batch_size[" + std::to_string(i) + "]",
                    "expected a positive integer");
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    cfg.train.learning_rate = field_or(t, "train", "learning_rate", cfg.train.learning_rate);
    cfg.train.momentum = field_or(t, "train", "momentum", cfg.train.momentum);
    cfg.train.epoch_cap = field_or(t, "train", "epoch_cap", cfg.train.epoch_cap);
    cfg.train.target_train_accuracy =
        field_or(t, "train", "target_train_accuracy", cfg.train.target_train_accuracy);
    cfg.train.lr_decay_epochs =
        field_or(t, "train", "lr_decay_epochs", cfg.train.lr_decay_epochs);
    cfg.train.lr_decay_factor =
        field_or(t, "train", "lr_decay_factor", cfg.train.lr_decay_factor);
  }
  cfg.zoo_seed = field_or<uint64_t>(j, "(root)", "seed", cfg.zoo_seed);

  cfg.validate();
  return cfg;
}

}  // namespace gapkit
