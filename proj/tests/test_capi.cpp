#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "json.hpp"

#include "gapkit.h"

// core headers used only to cross-check C API results against direct calls
#include "core/io.hpp"
#include "core/measures.hpp"
#include "core/runner.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("gapkit_capi_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& sub) const { return (path / sub).string(); }
};

const char* kTinyZooConfig = R"({
  "dataset": {"classes": 2, "image_size": 8, "train_samples": 20, "test_samples": 20, "seed": 3},
  "grid": {"width": [8], "depth": [1], "batch_size": [10], "dropout": [0.0],
           "weight_decay": [0.0], "random_label_fraction": [0.0]},
  "train": {"learning_rate": 0.05, "epoch_cap": 40},
  "seed": 5
})";

}  // namespace

TEST_CASE("version and error surface") {
  CHECK(std::string(gk_version()) == "0.1.0");
  CHECK(gk_model_load(nullptr, nullptr) == GK_ERR_INVALID_ARGUMENT);
  CHECK(std::string(gk_last_error()).find("null argument") != std::string::npos);
}

TEST_CASE("dataset generate / save / load / info") {
  TempDir tmp;
  gk_dataset* data = nullptr;
  REQUIRE(gk_dataset_generate(R"({"image_size": 8})", 2, 20, 7, 0, &data) == GK_OK);
  int64_t n = 0;
  int32_t h = 0, w = 0, c = 0, k = 0;
  REQUIRE(gk_dataset_info(data, &n, &h, &w, &c, &k) == GK_OK);
  CHECK(n == 20);
  CHECK(h == 8);
  CHECK(w == 8);
  CHECK(c == 3);
  CHECK(k == 2);

  REQUIRE(gk_dataset_save(data, tmp.str("d.gkds").c_str()) == GK_OK);
  gk_dataset* loaded = nullptr;
  REQUIRE(gk_dataset_load(tmp.str("d.gkds").c_str(), &loaded) == GK_OK);
  gk_dataset_free(loaded);
  gk_dataset_free(data);

  CHECK(gk_dataset_load(tmp.str("missing.gkds").c_str(), &loaded) == GK_ERR_IO);
  CHECK(gk_dataset_generate("{", 2, 10, 1, 0, &data) == GK_ERR_FORMAT);
  CHECK(gk_dataset_generate("{}", 2, 10, 1, 7, &data) == GK_ERR_INVALID_ARGUMENT);
}

TEST_CASE("full pipeline through the C API") {
  TempDir tmp;
  std::string zoo_dir = tmp.str("zoo");

  REQUIRE_MESSAGE(gk_zoo_build(kTinyZooConfig, zoo_dir.c_str(), 1, 0, nullptr,
                               nullptr) == GK_OK,
                  gk_last_error());
  CHECK(fs::exists(zoo_dir + "/zoo.json"));

  // refusing to overwrite without force
  CHECK(gk_zoo_build(kTinyZooConfig, zoo_dir.c_str(), 1, 0, nullptr, nullptr) ==
        GK_ERR_IO);
  CHECK(gk_zoo_build(kTinyZooConfig, zoo_dir.c_str(), 1, 1, nullptr, nullptr) ==
        GK_OK);

  // model handle round trip against the zoo's model
  gk_model* model = nullptr;
  REQUIRE(gk_model_load((zoo_dir + "/models/model_000").c_str(), &model) == GK_OK);
  char* info = nullptr;
  REQUIRE(gk_model_info(model, &info) == GK_OK);
  ordered_json parsed = ordered_json::parse(info);
  gk_string_free(info);
  CHECK(parsed.at("num_classes") == 2);
  REQUIRE(gk_model_save(model, tmp.str("resaved").c_str()) == GK_OK);
  {
    std::ifstream a(zoo_dir + "/models/model_000/weights.bin", std::ios::binary);
    std::ifstream b(tmp.str("resaved") + "/weights.bin", std::ios::binary);
    std::string ab((std::istreambuf_iterator<char>(a)), {});
    std::string bb((std::istreambuf_iterator<char>(b)), {});
    CHECK(ab == bb);
  }

  // accuracy against the recorded train accuracy
  gk_dataset* train = nullptr;
  REQUIRE(gk_dataset_load((zoo_dir + "/train.gkds").c_str(), &train) == GK_OK);
  double acc = 0.0;
  REQUIRE(gk_accuracy(model, train, &acc) == GK_OK);
  gapkit::ZooManifest manifest = gapkit::load_zoo_manifest(zoo_dir + "/zoo.json");
  CHECK(acc == manifest.records[0].train_accuracy);

  // single measure through the API equals the direct library call
  char* result = nullptr;
  REQUIRE_MESSAGE(gk_measure(model, train, "label_wise_mixup", R"({"lambda": 0.5})",
                             11, 0, &result) == GK_OK,
                  gk_last_error());
  ordered_json record = ordered_json::parse(result);
  gk_string_free(result);

  gapkit::ModelSpec spec = gapkit::load_model(zoo_dir + "/models/model_000");
  gapkit::Dataset train_data = gapkit::load_dataset(zoo_dir + "/train.gkds");
  gapkit::MeasureRequest req{"label_wise_mixup", ordered_json::parse(R"({"lambda": 0.5})")};
  gapkit::MeasureValue direct = gapkit::compute_measure(spec, train_data, req, 11, 0);
  CHECK(record.at("value").get<double>() == direct.value);

  CHECK(gk_measure(model, train, "no_such_measure", nullptr, 0, 0, &result) ==
        GK_ERR_INVALID_ARGUMENT);

  // measure -> score -> report over the zoo
  std::string results = tmp.str("results.json");
  const char* run_cfg = R"({"measures": ["dbi", "label_wise_mixup"], "seed": 2})";
  REQUIRE_MESSAGE(gk_measure_zoo(zoo_dir.c_str(), run_cfg, results.c_str(), nullptr,
                                 nullptr) == GK_OK,
                  gk_last_error());

  // resume: extending the measure list keeps the old records verbatim
  {
    ordered_json before = ordered_json::parse(std::ifstream(results));
    const char* extended =
        R"({"measures": ["dbi", "label_wise_mixup", "margin_summary"], "seed": 2})";
    REQUIRE(gk_measure_zoo(zoo_dir.c_str(), extended, results.c_str(), nullptr,
                           nullptr) == GK_OK);
    ordered_json after = ordered_json::parse(std::ifstream(results));
    CHECK(after.at("records").size() == before.at("records").size() + 1);
    for (const auto& rec : before.at("records")) {
      bool found = false;
      for (const auto& now : after.at("records"))
        if (now == rec) found = true;
      CHECK(found);
    }
  }

  std::string scores = tmp.str("scores.json");
  // a 1-model zoo cannot be scored pairwise, but the file must still render
  REQUIRE(gk_score(results.c_str(), zoo_dir.c_str(), scores.c_str(), nullptr) == GK_OK);
  char* text = nullptr;
  REQUIRE(gk_report(scores.c_str(), &text) == GK_OK);
  CHECK(std::string(text).find("n/a") != std::string::npos);
  gk_string_free(text);

  gk_dataset_free(train);
  gk_model_free(model);
}

TEST_CASE("model load failure paths map to distinct statuses") {
  TempDir tmp;
  gk_model* model = nullptr;
  CHECK(gk_model_load(tmp.str("nope").c_str(), &model) == GK_ERR_IO);

  // corrupt a stored model blob
  std::string zoo_dir = tmp.str("zoo");
  REQUIRE(gk_zoo_build(kTinyZooConfig, zoo_dir.c_str(), 1, 0, nullptr, nullptr) ==
          GK_OK);
  std::string blob_path = zoo_dir + "/models/model_000/weights.bin";
  {
    std::fstream f(blob_path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(10);
    char c;
    f.seekg(10);
    f.get(c);
    c = char(c ^ 0x7F);
    f.seekp(10);
    f.put(c);
  }
  CHECK(gk_model_load((zoo_dir + "/models/model_000").c_str(), &model) ==
        GK_ERR_CHECKSUM);
  CHECK(std::string(gk_last_error()).find("crc32") != std::string::npos);

  CHECK(gk_zoo_build("{\"grid\": {\"width\": [0]}}", tmp.str("z2").c_str(), 1, 0,
                     nullptr, nullptr) == GK_ERR_FORMAT);
  CHECK(std::string(gk_last_error()).find("grid.width[0]") != std::string::npos);
}
