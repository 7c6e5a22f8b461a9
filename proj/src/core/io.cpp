#include "core/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "core/error.hpp"

namespace gapkit {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts need byte swaps");

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr uint32_t kDatasetMagic = 0x53444b47;  // "GKDS"
constexpr uint32_t kDatasetVersion = 1;
constexpr int kModelFormatMajor = 1;
constexpr int kModelFormatMinor = 0;
constexpr int64_t kMaxElements = int64_t{1} << 31;

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  in.seekg(0, std::ios::end);
  auto len = in.tellg();
  in.seekg(0);
  std::vector<uint8_t> buf(static_cast<size_t>(len));
  in.read(reinterpret_cast<char*>(buf.data()), len);
  if (!in) fail(ErrorCode::io, "short read on " + path);
  return buf;
}

void write_file(const std::string& path, const void* data, size_t len) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(data), std::streamsize(len));
  if (!out) fail(ErrorCode::io, "short write on " + path);
}

struct Reader {
  const uint8_t* p;
  size_t left;
  std::string path;

  void pull(void* dst, size_t n) {
    if (n > left) fail(ErrorCode::format, "truncated file " + path);
    std::memcpy(dst, p, n);
    p += n;
    left -= n;
  }
  uint32_t u32() {
    uint32_t v;
    pull(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    pull(&v, 8);
    return v;
  }
};

template <class T>
void append(std::vector<uint8_t>& buf, T v) {
  const auto* b = reinterpret_cast<const uint8_t*>(&v);
  buf.insert(buf.end(), b, b + sizeof(T));
}

int64_t checked_extent_product(const std::vector<int64_t>& shape, const std::string& what) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e < 0) fail(ErrorCode::format, what + ": negative extent");
    if (e > 0 && n > kMaxElements / e)
      fail(ErrorCode::overflow, what + ": extent product overflows element cap");
    n *= e;
  }
  return n;
}

ordered_json layer_to_json(const LayerSpec& l, ordered_json& weights_table) {
  ordered_json j;
  j["kind"] = layer_kind_name(l.kind);
  switch (l.kind) {
    case LayerKind::conv2d:
      j["kernel"] = {l.kernel_h, l.kernel_w};
      j["in_channels"] = l.in_channels;
      j["out_channels"] = l.out_channels;
      j["stride"] = l.stride;
      j["padding"] = padding_name(l.padding);
      break;
    case LayerKind::dense:
      j["in_features"] = l.in_features;
      j["out_features"] = l.out_features;
      break;
    case LayerKind::maxpool:
      j["pool"] = {l.pool_h, l.pool_w};
      j["stride"] = l.stride;
      j["padding"] = padding_name(l.padding);
      break;
    case LayerKind::dropout:
      j["rate"] = l.drop_rate;
      break;
    default:
      break;
  }
  if (l.parameterized()) {
    auto add_entry = [&](const Tensor& t) {
      ordered_json e;
      e["shape"] = t.shape;
      e["offset"] = 0;  // patched once blob offsets are known
      weights_table.push_back(e);
      return int(weights_table.size()) - 1;
    };
    j["weight"] = add_entry(l.weight);
    if (!l.bias.empty()) j["bias"] = add_entry(l.bias);
  }
  return j;
}

}  // namespace

uint32_t crc32(const void* data, size_t len) {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int b = 0; b < 8; ++b) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = 0xFFFFFFFFu;
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

void Dataset::validate() const {
  if (batch.images.rank() != 4)
    fail(ErrorCode::shape_mismatch,
         "dataset images must be (N, H, W, C), got " + shape_str(batch.images.shape));
  if (num_classes < 1) fail(ErrorCode::invalid_argument, "dataset num_classes < 1");
  if (int64_t(batch.labels.size()) != batch.images.extent(0))
    fail(ErrorCode::shape_mismatch, "dataset label count does not match image count");
  for (float v : batch.images.data)
    if (!(v >= 0.0f && v <= 1.0f))
      fail(ErrorCode::format, "pixel value " + std::to_string(v) +
                                  " outside the [0,1] dataset contract");
  std::vector<char> seen(size_t(num_classes), 0);
  for (int32_t y : batch.labels) {
    if (y < 0 || y >= num_classes)
      fail(ErrorCode::format, "label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    seen[size_t(y)] = 1;
  }
  if (split == Split::train)
    for (int c = 0; c < num_classes; ++c)
      if (!seen[size_t(c)])
        fail(ErrorCode::format,
             "train split is missing class " + std::to_string(c));
}

Dataset take_subset(const Dataset& data, const std::vector<int64_t>& indices) {
  const Tensor& img = data.batch.images;
  std::vector<int64_t> shape = img.shape;
  shape[0] = int64_t(indices.size());
  Dataset out;
  out.num_classes = data.num_classes;
  out.split = data.split;
  out.batch.images = Tensor(shape);
  out.batch.labels.resize(indices.size());
  const int64_t ss = img.sample_size();
  for (size_t i = 0; i < indices.size(); ++i) {
    int64_t src = indices[i];
    if (src < 0 || src >= data.size())
      fail(ErrorCode::invalid_argument, "subset index out of range");
    std::memcpy(out.batch.images.sample(int64_t(i)), img.sample(src),
                sizeof(float) * size_t(ss));
    out.batch.labels[i] = data.batch.labels[size_t(src)];
  }
  return out;
}

void save_model(const ModelSpec& model, const std::string& dir) {
  model.validate();
  fs::create_directories(dir);

  std::vector<uint8_t> blob;
  ordered_json weights = ordered_json::array();
  ordered_json layers = ordered_json::array();
  for (const LayerSpec& l : model.layers)
    layers.push_back(layer_to_json(l, weights));
  // Patch offsets while appending tensors in layer order.
  size_t entry = 0;
  for (const LayerSpec& l : model.layers) {
    if (!l.parameterized()) continue;
    auto put = [&](const Tensor& t) {
      weights[entry]["offset"] = blob.size();
      weights[entry]["bytes"] = t.data.size() * sizeof(float);
      const auto* b = reinterpret_cast<const uint8_t*>(t.data.data());
      blob.insert(blob.end(), b, b + t.data.size() * sizeof(float));
      ++entry;
    };
    put(l.weight);
    if (!l.bias.empty()) put(l.bias);
  }

  ordered_json manifest;
  manifest["format"] = {{"major", kModelFormatMajor}, {"minor", kModelFormatMinor}};
  manifest["kind"] = "gapkit-model";
  manifest["input_shape"] = model.input_shape;
  manifest["num_classes"] = model.num_classes;
  manifest["layer_count"] = model.layers.size();
  manifest["layers"] = layers;
  manifest["weights"] = weights;
  manifest["blob"] = {{"bytes", blob.size()}, {"crc32", crc32(blob.data(), blob.size())}};

  std::string text = manifest.dump(2);
  text.push_back('\n');
  write_file((fs::path(dir) / "model.json").string(), text.data(), text.size());
  write_file((fs::path(dir) / "weights.bin").string(), blob.data(), blob.size());
}

ModelSpec load_model(const std::string& dir) {
  const std::string manifest_path = (fs::path(dir) / "model.json").string();
  const std::string blob_path = (fs::path(dir) / "weights.bin").string();
  std::vector<uint8_t> text = read_file(manifest_path);
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(text.begin(), text.end());
  } catch (const std::exception& e) {
    fail(ErrorCode::format, "model.json: " + std::string(e.what()));
  }

  try {
    int major = manifest.at("format").at("major").get<int>();
    if (major != kModelFormatMajor)
      fail(ErrorCode::format, "unsupported model format major version " +
                                  std::to_string(major));

    std::vector<uint8_t> blob = read_file(blob_path);
    uint64_t declared_bytes = manifest.at("blob").at("bytes").get<uint64_t>();
    if (declared_bytes != blob.size())
      fail(ErrorCode::format, "blob: declared " + std::to_string(declared_bytes) +
                                  " bytes, file has " + std::to_string(blob.size()));
    uint32_t declared_crc = manifest.at("blob").at("crc32").get<uint32_t>();
    uint32_t actual_crc = crc32(blob.data(), blob.size());
    if (declared_crc != actual_crc)
      fail(ErrorCode::checksum, "blob: crc32 mismatch (manifest " +
                                    std::to_string(declared_crc) + ", file " +
                                    std::to_string(actual_crc) + ")");

    const auto& layers_json = manifest.at("layers");
    uint64_t layer_count = manifest.at("layer_count").get<uint64_t>();
    if (layer_count != layers_json.size())
      fail(ErrorCode::format, "layer_count: declares " + std::to_string(layer_count) +
                                  " layers, manifest lists " +
                                  std::to_string(layers_json.size()));

    const auto& weights_json = manifest.at("weights");
    std::vector<char> referenced(weights_json.size(), 0);
    auto fetch_tensor = [&](size_t idx) {
      if (idx >= weights_json.size())
        fail(ErrorCode::format, "weights: reference " + std::to_string(idx) +
                                    " out of range");
      if (referenced[idx])
        fail(ErrorCode::format, "weights: entry " + std::to_string(idx) +
                                    " referenced twice");
      referenced[idx] = 1;
      const auto& e = weights_json.at(idx);
      std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
      int64_t count = checked_extent_product(shape, "weights[" + std::to_string(idx) + "]");
      uint64_t offset = e.at("offset").get<uint64_t>();
      uint64_t bytes = e.at("bytes").get<uint64_t>();
      if (bytes != uint64_t(count) * sizeof(float))
        fail(ErrorCode::format, "weights[" + std::to_string(idx) +
                                    "]: byte count does not match shape");
      if (offset + bytes < offset || offset + bytes > blob.size())
        fail(ErrorCode::overflow, "weights[" + std::to_string(idx) +
                                      "]: range exceeds blob");
      std::vector<float> data(static_cast<size_t>(count));
      std::memcpy(data.data(), blob.data() + offset, size_t(bytes));
      return Tensor(shape, std::move(data));
    };

    ModelSpec model;
    model.input_shape = manifest.at("input_shape").get<std::vector<int64_t>>();
    model.num_classes = manifest.at("num_classes").get<int>();
    for (const auto& lj : layers_json) {
      LayerKind kind = layer_kind_from_name(lj.at("kind").get<std::string>());
      LayerSpec l;
      switch (kind) {
        case LayerKind::conv2d: {
          auto kernel = lj.at("kernel").get<std::vector<int>>();
          if (kernel.size() != 2) fail(ErrorCode::format, "conv2d kernel must have 2 extents");
          l = make_conv2d(kernel[0], kernel[1], lj.at("in_channels").get<int>(),
                          lj.at("out_channels").get<int>(), lj.at("stride").get<int>(),
                          padding_from_name(lj.at("padding").get<std::string>()),
                          lj.contains("bias"));
          break;
        }
        case LayerKind::dense:
          l = make_dense(lj.at("in_features").get<int>(),
                         lj.at("out_features").get<int>(), lj.contains("bias"));
          break;
        case LayerKind::maxpool: {
          auto pool = lj.at("pool").get<std::vector<int>>();
          if (pool.size() != 2) fail(ErrorCode::format, "maxpool pool must have 2 extents");
          l = make_maxpool(pool[0], pool[1], lj.at("stride").get<int>(),
                           padding_from_name(lj.at("padding").get<std::string>()));
          break;
        }
        case LayerKind::dropout:
          l = make_dropout(lj.at("rate").get<float>());
          break;
        case LayerKind::relu:
          l = make_relu();
          break;
        case LayerKind::globalavgpool:
          l = make_globalavgpool();
          break;
        case LayerKind::flatten:
          l = make_flatten();
          break;
        case LayerKind::softmax:
          l = make_softmax();
          break;
      }
      if (l.parameterized()) {
        Tensor w = fetch_tensor(lj.at("weight").get<size_t>());
        if (w.shape != l.weight.shape)
          fail(ErrorCode::format, "weights: stored shape " + shape_str(w.shape) +
                                      " does not match layer spec " +
                                      shape_str(l.weight.shape));
        l.weight = std::move(w);
        if (lj.contains("bias")) {
          Tensor b = fetch_tensor(lj.at("bias").get<size_t>());
          if (b.shape != l.bias.shape)
            fail(ErrorCode::format, "weights: stored bias shape mismatch");
          l.bias = std::move(b);
        }
      }
      model.layers.push_back(std::move(l));
    }
    for (size_t i = 0; i < referenced.size(); ++i)
      if (!referenced[i])
        fail(ErrorCode::format, "weights: entry " + std::to_string(i) +
                                    " is not referenced by any layer (layer_count/"
                                    "weights tables inconsistent)");
    model.validate();
    return model;
  } catch (const ordered_json::exception& e) {
    fail(ErrorCode::format, "model.json: " + std::string(e.what()));
  }
}

void save_dataset(const Dataset& data, const std::string& path) {
  data.validate();
  const Tensor& img = data.batch.images;
  std::vector<uint8_t> buf;
  buf.reserve(40 + img.data.size() * 4 + data.batch.labels.size() * 4);
  append(buf, kDatasetMagic);
  append(buf, kDatasetVersion);
  append(buf, uint32_t(data.split));
  append(buf, uint64_t(img.extent(0)));
  append(buf, uint32_t(img.extent(1)));
  append(buf, uint32_t(img.extent(2)));
  append(buf, uint32_t(img.extent(3)));
  append(buf, uint32_t(data.num_classes));
  const auto* ib = reinterpret_cast<const uint8_t*>(img.data.data());
  buf.insert(buf.end(), ib, ib + img.data.size() * sizeof(float));
  const auto* lb = reinterpret_cast<const uint8_t*>(data.batch.labels.data());
  buf.insert(buf.end(), lb, lb + data.batch.labels.size() * sizeof(int32_t));
  write_file(path, buf.data(), buf.size());
}

Dataset load_dataset(const std::string& path) {
  std::vector<uint8_t> buf = read_file(path);
  Reader r{buf.data(), buf.size(), path};
  if (r.u32() != kDatasetMagic) fail(ErrorCode::format, path + ": bad dataset magic");
  uint32_t version = r.u32();
  if (version != kDatasetVersion)
    fail(ErrorCode::format, path + ": unsupported dataset version " + std::to_string(version));
  uint32_t split = r.u32();
  if (split > 1) fail(ErrorCode::format, path + ": bad split tag");
  uint64_t n = r.u64();
  uint32_t h = r.u32(), w = r.u32(), c = r.u32(), kappa = r.u32();
  std::vector<int64_t> shape{int64_t(n), int64_t(h), int64_t(w), int64_t(c)};
  int64_t count = checked_extent_product(shape, "dataset header");

  Dataset data;
  data.split = Split(split);
  data.num_classes = int(kappa);
  data.batch.images = Tensor(shape);
  r.pull(data.batch.images.data.data(), size_t(count) * sizeof(float));
  data.batch.labels.resize(size_t(n));
  r.pull(data.batch.labels.data(), size_t(n) * sizeof(int32_t));
  if (r.left != 0) fail(ErrorCode::format, path + ": trailing bytes after label block");
  data.validate();
  return data;
}

namespace {

ordered_json record_to_json(const ZooRecord& r) {
  ordered_json j;
  j["model"] = r.model_path;
  ordered_json cfg;
  for (const auto& [k, v] : r.config) cfg[k] = v;
  j["config"] = cfg;
  j["train_accuracy"] = r.train_accuracy;
  j["test_accuracy"] = r.test_accuracy;
  j["gap"] = r.gap;
  j["train_seed"] = r.train_seed;
  j["saturated"] = r.saturated;
  j["diverged"] = r.diverged;
  j["saturation_target"] = r.saturation_target;
  j["epochs_run"] = r.epochs_run;
  j["corrupt_indices"] = r.corrupt_indices;
  j["corrupt_labels"] = r.corrupt_labels;
  return j;
}

ZooRecord record_from_json(const ordered_json& j) {
  ZooRecord r;
  r.model_path = j.at("model").get<std::string>();
  for (auto it = j.at("config").begin(); it != j.at("config").end(); ++it)
    r.config.emplace_back(it.key(), it.value().get<double>());
  r.train_accuracy = j.at("train_accuracy").get<double>();
  r.test_accuracy = j.at("test_accuracy").get<double>();
  r.gap = j.at("gap").get<double>();
  r.train_seed = j.at("train_seed").get<uint64_t>();
  r.saturated = j.at("saturated").get<bool>();
  r.diverged = j.at("diverged").get<bool>();
  r.saturation_target = j.at("saturation_target").get<double>();
  r.epochs_run = j.at("epochs_run").get<int>();
  r.corrupt_indices = j.at("corrupt_indices").get<std::vector<int64_t>>();
  r.corrupt_labels = j.at("corrupt_labels").get<std::vector<int32_t>>();
  if (r.gap != r.train_accuracy - r.test_accuracy)
    fail(ErrorCode::format, "zoo record " + r.model_path +
                                ": gap does not equal train - test accuracy");
  if (r.train_accuracy < 0 || r.train_accuracy > 1 || r.test_accuracy < 0 ||
      r.test_accuracy > 1)
    fail(ErrorCode::format, "zoo record " + r.model_path + ": accuracy outside [0,1]");
  return r;
}

}  // namespace

void save_zoo_manifest(const ZooManifest& manifest, const std::string& path) {
  ordered_json j;
  j["kind"] = "gapkit-zoo";
  j["version"] = 1;
  j["axes"] = manifest.axes;
  j["train_data"] = manifest.train_data;
  j["test_data"] = manifest.test_data;
  ordered_json records = ordered_json::array();
  for (const ZooRecord& r : manifest.records) records.push_back(record_to_json(r));
  j["models"] = records;
  std::string text = j.dump(2);
  text.push_back('\n');
  write_file(path, text.data(), text.size());
}

ZooManifest load_zoo_manifest(const std::string& path) {
  std::vector<uint8_t> text = read_file(path);
  ordered_json j;
  try {
    j = ordered_json::parse(text.begin(), text.end());
  } catch (const std::exception& e) {
    fail(ErrorCode::format, path + ": " + std::string(e.what()));
  }
  try {
    ZooManifest m;
    m.axes = j.at("axes").get<std::vector<std::string>>();
    m.train_data = j.at("train_data").get<std::string>();
    m.test_data = j.at("test_data").get<std::string>();
    for (const auto& rj : j.at("models")) {
      ZooRecord r = record_from_json(rj);
      if (r.config.size() != m.axes.size())
        fail(ErrorCode::format, "zoo record " + r.model_path +
                                    ": config axes do not match manifest axes");
      for (size_t i = 0; i < m.axes.size(); ++i)
        if (r.config[i].first != m.axes[i])
          fail(ErrorCode::format, "zoo record " + r.model_path +
                                      ": axis order differs from manifest");
      m.records.push_back(std::move(r));
    }
    return m;
  } catch (const ordered_json::exception& e) {
    fail(ErrorCode::format, path + ": " + std::string(e.what()));
  }
}

std::vector<int32_t> training_labels(const Dataset& train, const ZooRecord& record) {
  std::vector<int32_t> labels = train.batch.labels;
  if (record.corrupt_indices.size() != record.corrupt_labels.size())
    fail(ErrorCode::format, "corruption mask index/label count mismatch");
  for (size_t i = 0; i < record.corrupt_indices.size(); ++i) {
    int64_t idx = record.corrupt_indices[i];
    if (idx < 0 || idx >= int64_t(labels.size()))
      fail(ErrorCode::format, "corruption mask index out of range");
    labels[size_t(idx)] = record.corrupt_labels[i];
  }
  return labels;
}

}  // namespace gapkit
