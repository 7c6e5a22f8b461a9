#include "gapkit.h"

#include <cstring>
#include <string>

#include "json.hpp"

#include "core/error.hpp"
#include "core/io.hpp"
#include "core/measures.hpp"
#include "core/model.hpp"
#include "core/runner.hpp"
#include "core/zoo.hpp"

using namespace gapkit;
using ordered_json = nlohmann::ordered_json;

struct gk_model {
  ModelSpec spec;
};

struct gk_dataset {
  Dataset data;
};

namespace {

thread_local std::string g_last_error;

gk_status status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return GK_ERR_INVALID_ARGUMENT;
    case ErrorCode::shape_mismatch: return GK_ERR_SHAPE;
    case ErrorCode::io: return GK_ERR_IO;
    case ErrorCode::format: return GK_ERR_FORMAT;
    case ErrorCode::checksum: return GK_ERR_CHECKSUM;
    case ErrorCode::overflow: return GK_ERR_OVERFLOW;
    case ErrorCode::numeric: return GK_ERR_NUMERIC;
    case ErrorCode::degenerate: return GK_ERR_DEGENERATE;
    case ErrorCode::unsupported: return GK_ERR_UNSUPPORTED;
  }
  return GK_ERR_UNKNOWN;
}

template <class Fn>
gk_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return GK_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return GK_ERR_UNKNOWN;
  }
}

char* copy_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

ordered_json parse_json_arg(const char* text, const char* what) {
  if (text == nullptr || *text == '\0') return ordered_json::object();
  try {
    return ordered_json::parse(text);
  } catch (const std::exception& e) {
    fail(ErrorCode::format, std::string(what) + ": " + e.what());
  }
}

void require(bool ok, const char* what) {
  if (!ok) fail(ErrorCode::invalid_argument, what);
}

}  // namespace

extern "C" {

const char* gk_version(void) { return "0.1.0"; }

const char* gk_last_error(void) { return g_last_error.c_str(); }

void gk_string_free(char* s) { delete[] s; }

gk_status gk_model_load(const char* dir, gk_model** out) {
  return guarded([&] {
    require(dir && out, "gk_model_load: null argument");
    auto* m = new gk_model{load_model(dir)};
    *out = m;
  });
}

gk_status gk_model_save(const gk_model* model, const char* dir) {
  return guarded([&] {
    require(model && dir, "gk_model_save: null argument");
    save_model(model->spec, dir);
  });
}

void gk_model_free(gk_model* model) { delete model; }

gk_status gk_model_info(const gk_model* model, char** json_out) {
  return guarded([&] {
    require(model && json_out, "gk_model_info: null argument");
    ordered_json j;
    j["input_shape"] = model->spec.input_shape;
    j["num_classes"] = model->spec.num_classes;
    j["depth"] = model->spec.depth();
    ordered_json layers = ordered_json::array();
    for (const LayerSpec& l : model->spec.layers)
      layers.push_back(layer_kind_name(l.kind));
    j["layers"] = layers;
    *json_out = copy_string(j.dump());
  });
}

gk_status gk_dataset_load(const char* path, gk_dataset** out) {
  return guarded([&] {
    require(path && out, "gk_dataset_load: null argument");
    auto* d = new gk_dataset{load_dataset(path)};
    *out = d;
  });
}

gk_status gk_dataset_save(const gk_dataset* data, const char* path) {
  return guarded([&] {
    require(data && path, "gk_dataset_save: null argument");
    save_dataset(data->data, path);
  });
}

void gk_dataset_free(gk_dataset* data) { delete data; }

gk_status gk_dataset_generate(const char* synth_json, int32_t num_classes,
                              int64_t count, uint64_t seed, int32_t split,
                              gk_dataset** out) {
  return guarded([&] {
    require(out, "gk_dataset_generate: null output");
    require(split == 0 || split == 1, "gk_dataset_generate: split must be 0 or 1");
    ordered_json j = parse_json_arg(synth_json, "synth config");
    SynthConfig cfg;
    if (j.contains("image_size")) cfg.image_size = j.at("image_size").get<int>();
    if (j.contains("scale_range")) {
      cfg.scale_lo = j.at("scale_range").at(0).get<double>();
      cfg.scale_hi = j.at("scale_range").at(1).get<double>();
    }
    if (j.contains("position_jitter"))
      cfg.position_jitter = j.at("position_jitter").get<double>();
    if (j.contains("rotation_max_deg"))
      cfg.rotation_max_deg = j.at("rotation_max_deg").get<double>();
    if (j.contains("color_jitter")) cfg.color_jitter = j.at("color_jitter").get<double>();
    if (j.contains("noise_sigma")) cfg.noise_sigma = j.at("noise_sigma").get<double>();
    auto* d = new gk_dataset{
        generate_dataset(cfg, num_classes, count, seed, Split(split))};
    *out = d;
  });
}

gk_status gk_dataset_info(const gk_dataset* data, int64_t* count, int32_t* height,
                          int32_t* width, int32_t* channels, int32_t* num_classes) {
  return guarded([&] {
    require(data, "gk_dataset_info: null dataset");
    const Tensor& img = data->data.batch.images;
    if (count) *count = img.extent(0);
    if (height) *height = int32_t(img.extent(1));
    if (width) *width = int32_t(img.extent(2));
    if (channels) *channels = int32_t(img.extent(3));
    if (num_classes) *num_classes = data->data.num_classes;
  });
}

gk_status gk_accuracy(const gk_model* model, const gk_dataset* data, double* out) {
  return guarded([&] {
    require(model && data && out, "gk_accuracy: null argument");
    *out = accuracy(model->spec, data->data);
  });
}

gk_status gk_measure(const gk_model* model, const gk_dataset* data,
                     const char* measure_id, const char* config_json, uint64_t seed,
                     int64_t budget, char** result_json) {
  return guarded([&] {
    require(model && data && measure_id && result_json, "gk_measure: null argument");
    MeasureRequest req;
    req.id = measure_id;
    req.config = parse_json_arg(config_json, "measure config");
    MeasureValue value = compute_measure(model->spec, data->data, req, seed, budget);
    *result_json = copy_string(measure_value_to_json(value).dump());
  });
}

gk_status gk_zoo_build(const char* config_json, const char* out_dir, int parallelism,
                       int force, gk_progress_fn progress, void* user) {
  return guarded([&] {
    require(config_json && out_dir, "gk_zoo_build: null argument");
    ZooConfig cfg = zoo_config_from_json(parse_json_arg(config_json, "zoo config"));
    ProgressFn fn;
    if (progress)
      fn = [progress, user](const std::string& line) { progress(line.c_str(), user); };
    build_zoo(cfg, out_dir, parallelism, force != 0, fn);
  });
}

gk_status gk_measure_zoo(const char* zoo_dir, const char* run_config_json,
                         const char* out_path, gk_progress_fn progress, void* user) {
  int failures = 0;
  gk_status status = guarded([&] {
    require(zoo_dir && out_path, "gk_measure_zoo: null argument");
    RunPlan plan = run_plan_from_json(parse_json_arg(run_config_json, "run config"));
    plan.zoo_dir = zoo_dir;
    ProgressFn fn;
    if (progress)
      fn = [progress, user](const std::string& line) { progress(line.c_str(), user); };
    failures = run_measures(plan, out_path, fn);
  });
  if (status != GK_OK) return status;
  if (failures > 0) {
    g_last_error = std::to_string(failures) + " measure pairs failed";
    return GK_ERR_PARTIAL;
  }
  return GK_OK;
}

gk_status gk_score(const char* results_path, const char* zoo_dir, const char* out_path,
                   const char* options_json) {
  return guarded([&] {
    require(results_path && zoo_dir && out_path, "gk_score: null argument");
    ordered_json j = parse_json_arg(options_json, "score options");
    ScoreOptions options;
    if (j.contains("max_conditioning_size"))
      options.cmi.max_conditioning_size = j.at("max_conditioning_size").get<int>();
    if (j.contains("exact_size_only"))
      options.cmi.exact_size_only = j.at("exact_size_only").get<bool>();
    if (j.contains("ties")) {
      std::string t = j.at("ties").get<std::string>();
      if (t == "drop")
        options.cmi.ties = CmiTiePolicy::drop;
      else if (t == "category")
        options.cmi.ties = CmiTiePolicy::category;
      else
        fail(ErrorCode::format, "score options: unknown tie policy '" + t + "'");
    }
    if (j.contains("include_flagged"))
      options.include_flagged = j.at("include_flagged").get<bool>();
    score_results(results_path, zoo_dir, out_path, options);
  });
}

gk_status gk_report(const char* scores_path, char** text_out) {
  return guarded([&] {
    require(scores_path && text_out, "gk_report: null argument");
    *text_out = copy_string(render_report(scores_path));
  });
}

}  // extern "C"
