#include "core/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace gapkit {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

uint64_t fnv64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

LayerSelector selector_from_json(const ordered_json& j, const char* key,
                                 LayerSelector fallback, int& explicit_index) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (v.is_number_integer()) {
    explicit_index = v.get<int>();
    return LayerSelector::explicit_index;
  }
  std::string name = v.get<std::string>();
  if (name == "input") return LayerSelector::input;
  if (name == "first_conv") return LayerSelector::first_conv_act;
  if (name == "third_from_last") return LayerSelector::third_from_last;
  fail(ErrorCode::format, std::string("measure config: unknown layer selector '") +
                              name + "'");
}

AugmentConfig augment_from_json(const ordered_json& j, uint64_t seed) {
  AugmentConfig a;
  a.seed = seed;
  if (j.is_null()) return a;
  auto range = [&](const char* key, double& lo, double& hi) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2)
      fail(ErrorCode::format, std::string("augment config: ") + key + ": expected [lo, hi]");
    lo = v[0].get<double>();
    hi = v[1].get<double>();
  };
  if (j.contains("hue_max_delta")) a.hue_max_delta = j.at("hue_max_delta").get<double>();
  range("saturation_range", a.saturation_lo, a.saturation_hi);
  if (j.contains("brightness_max_delta"))
    a.brightness_max_delta = j.at("brightness_max_delta").get<double>();
  range("contrast_range", a.contrast_lo, a.contrast_hi);
  range("zoom_range", a.zoom_lo, a.zoom_hi);
  if (j.contains("horizontal_flip")) a.horizontal_flip = j.at("horizontal_flip").get<bool>();
  if (j.contains("generic")) a.generic = j.at("generic").get<bool>();
  if (j.contains("seed")) a.seed = j.at("seed").get<uint64_t>();
  return a;
}

DbiConfig dbi_from_json(const ordered_json& j, ClusterIndex index, uint64_t seed) {
  DbiConfig cfg;
  cfg.index = index;
  cfg.seed = seed;
  cfg.layer = selector_from_json(j, "layer", LayerSelector::first_conv_act,
                                 cfg.explicit_layer);
  if (j.contains("reduction")) {
    std::string r = j.at("reduction").get<std::string>();
    if (r == "maxpool4")
      cfg.reduction = DbiReduction::maxpool4;
    else if (r == "pca")
      cfg.reduction = DbiReduction::pca;
    else if (r == "none")
      cfg.reduction = DbiReduction::none;
    else
      fail(ErrorCode::format, "dbi config: unknown reduction '" + r + "'");
  }
  if (j.contains("pca_components")) cfg.pca_components = j.at("pca_components").get<int>();
  if (j.contains("aggregation")) {
    std::string a = j.at("aggregation").get<std::string>();
    if (a == "mean")
      cfg.aggregation = DbiAggregation::mean;
    else if (a == "max")
      cfg.aggregation = DbiAggregation::max;
    else
      fail(ErrorCode::format, "dbi config: unknown aggregation '" + a + "'");
  }
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int64_t>();
  if (j.contains("num_batches")) cfg.num_batches = j.at("num_batches").get<int>();
  if (j.contains("p_norm")) cfg.p_norm = j.at("p_norm").get<double>();
  return cfg;
}

MarginConfig margin_from_json(const ordered_json& j, PerturbationSource source,
                              uint64_t seed, int64_t budget) {
  MarginConfig cfg;
  cfg.perturbation = source;
  cfg.seed = seed;
  cfg.budget = budget;
  if (j.contains("layer")) cfg.layer = j.at("layer").get<int>();
  if (j.contains("summary")) {
    std::string s = j.at("summary").get<std::string>();
    if (s == "quantile_mean")
      cfg.summary = MarginSummary::quantile_mean;
    else if (s == "mean")
      cfg.summary = MarginSummary::mean;
    else
      fail(ErrorCode::format, "margin config: unknown summary '" + s + "'");
  }
  if (j.contains("quantiles")) cfg.quantiles = j.at("quantiles").get<std::vector<double>>();
  if (j.contains("normalization")) {
    std::string n = j.at("normalization").get<std::string>();
    if (n == "total_variation")
      cfg.normalization = MarginNormalization::total_variation;
    else if (n == "none")
      cfg.normalization = MarginNormalization::none;
    else
      fail(ErrorCode::format, "margin config: unknown normalization '" + n + "'");
  }
  return cfg;
}

}  // namespace

const std::vector<std::string>& known_measure_ids() {
  static const std::vector<std::string> ids = {
      "dbi",
      "silhouette",
      "calinski_harabasz",
      "label_wise_mixup",
      "manifold_mixup",
      "margin_summary",
      "augment_margin_summary",
      "mixup_margin_summary",
      "dbi_x_label_wise_mixup",
      "prod_of_spec_over_margin",
      "prod_of_fro_over_margin",
      "augment_performance",
  };
  return ids;
}

MeasureValue compute_measure(const ModelSpec& model, const Dataset& train,
                             const MeasureRequest& request, uint64_t seed,
                             int64_t budget) {
  const std::string& id = request.id;
  const ordered_json& j = request.config;

  if (id == "dbi" || id == "silhouette" || id == "calinski_harabasz") {
    ClusterIndex index = id == "dbi"          ? ClusterIndex::davies_bouldin
                         : id == "silhouette" ? ClusterIndex::silhouette
                                              : ClusterIndex::calinski_harabasz;
    return dbi_measure(model, train, dbi_from_json(j, index, seed));
  }
  if (id == "label_wise_mixup") {
    MixupSpec spec;
    spec.layer = 0;
    spec.pairing_seed = seed;
    if (j.contains("lambda")) spec.lambda = j.at("lambda").get<double>();
    return mixup_measure(model, train, spec, budget);
  }
  if (id == "manifold_mixup") {
    MixupSpec spec;
    spec.pairing_seed = seed;
    if (j.contains("lambda")) spec.lambda = j.at("lambda").get<double>();
    int explicit_layer = 0;
    LayerSelector sel =
        selector_from_json(j, "layer", LayerSelector::first_conv_act, explicit_layer);
    spec.layer = resolve_layer(model, sel, explicit_layer);
    if (spec.layer == 0)
      fail(ErrorCode::invalid_argument, "manifold_mixup needs a hidden layer (> 0)");
    return mixup_measure(model, train, spec, budget);
  }
  if (id == "margin_summary")
    return margin_measure(model, train,
                          margin_from_json(j, PerturbationSource::none, seed, budget));
  if (id == "augment_margin_summary") {
    MarginConfig cfg = margin_from_json(j, PerturbationSource::augment, seed, budget);
    AugmentConfig aug = augment_from_json(
        j.contains("augment") ? j.at("augment") : ordered_json(), seed);
    return margin_measure(model, train, cfg, &aug, nullptr);
  }
  if (id == "mixup_margin_summary") {
    MarginConfig cfg = margin_from_json(j, PerturbationSource::mixup, seed, budget);
    MixupSpec mix;
    mix.layer = cfg.layer;
    mix.pairing_seed = seed;
    if (j.contains("lambda")) mix.lambda = j.at("lambda").get<double>();
    return margin_measure(model, train, cfg, nullptr, &mix);
  }
  if (id == "dbi_x_label_wise_mixup") {
    MeasureRequest dbi_req{"dbi", j.contains("dbi") ? j.at("dbi") : ordered_json::object()};
    MeasureRequest mix_req{"label_wise_mixup",
                           j.contains("mixup") ? j.at("mixup") : ordered_json::object()};
    MeasureValue dbi = compute_measure(model, train, dbi_req, seed, budget);
    MeasureValue mix = compute_measure(model, train, mix_req, seed, budget);
    return combined_dbi_mixup(dbi, mix);
  }
  if (id == "prod_of_spec_over_margin" || id == "prod_of_fro_over_margin") {
    double percentile = j.contains("margin_percentile")
                            ? j.at("margin_percentile").get<double>()
                            : 10.0;
    NormKind kind = id == "prod_of_spec_over_margin" ? NormKind::spectral
                                                     : NormKind::frobenius;
    return norm_over_margin_baseline(model, train, kind, percentile, budget, seed);
  }
  if (id == "augment_performance") {
    AugmentConfig aug = augment_from_json(
        j.contains("augment") ? j.at("augment") : ordered_json(), seed);
    return augment_performance(model, train, aug, budget, seed);
  }
  fail(ErrorCode::invalid_argument, "unknown measure id '" + id + "'");
}

ordered_json measure_value_to_json(const MeasureValue& v) {
  ordered_json j;
  j["measure"] = v.measure_id;
  if (std::isfinite(v.value))
    j["value"] = v.value;
  else
    j["value"] = v.value > 0 ? "inf" : "-inf";
  j["higher_means_larger_gap"] = v.higher_means_larger_gap;
  j["layer"] = v.layer;
  j["sample_budget"] = v.sample_budget;
  j["seed"] = v.seed;
  j["config"] = v.config;
  j["provenance"] = v.provenance;
  return j;
}

RunPlan run_plan_from_json(const ordered_json& j) {
  RunPlan plan;
  if (!j.is_object()) fail(ErrorCode::format, "run config: expected an object");
  if (j.contains("zoo")) plan.zoo_dir = j.at("zoo").get<std::string>();
  if (j.contains("seed")) plan.seed = j.at("seed").get<uint64_t>();
  if (j.contains("budget")) plan.budget = j.at("budget").get<int64_t>();
  if (j.contains("parallel")) plan.parallelism = j.at("parallel").get<int>();
  if (j.contains("measures")) {
    for (const auto& m : j.at("measures")) {
      MeasureRequest req;
      if (m.is_string()) {
        req.id = m.get<std::string>();
      } else if (m.is_object()) {
        if (!m.contains("id"))
          fail(ErrorCode::format, "run config: measures[]: missing 'id'");
        req.id = m.at("id").get<std::string>();
        if (m.contains("config")) req.config = m.at("config");
      } else {
        fail(ErrorCode::format, "run config: measures[] entries must be ids or objects");
      }
      const auto& known = known_measure_ids();
      if (std::find(known.begin(), known.end(), req.id) == known.end())
        fail(ErrorCode::format, "run config: unknown measure id '" + req.id + "'");
      for (const MeasureRequest& prior : plan.measures)
        if (prior.id == req.id)
          fail(ErrorCode::format,
               "run config: measure id '" + req.id + "' listed twice");
      plan.measures.push_back(std::move(req));
    }
  }
  return plan;
}

namespace {

std::string provenance_hash(const std::string& model_path, const MeasureRequest& req,
                            uint64_t seed, int64_t budget) {
  std::string key = model_path + "|" + req.id + "|" + req.config.dump() + "|" +
                    std::to_string(seed) + "|" + std::to_string(budget);
  return hex64(fnv64(key));
}

ordered_json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  try {
    return ordered_json::parse(in);
  } catch (const std::exception& e) {
    fail(ErrorCode::format, path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot open " + path + " for writing");
  out << text;
  if (!out) fail(ErrorCode::io, "short write on " + path);
}

double value_from_json(const ordered_json& v) {
  if (v.is_string()) {
    std::string s = v.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    fail(ErrorCode::format, "bad measure value '" + s + "'");
  }
  return v.get<double>();
}

}  // namespace

int run_measures(const RunPlan& plan, const std::string& out_path,
                 const ProgressFn& progress) {
  if (plan.zoo_dir.empty()) fail(ErrorCode::invalid_argument, "run plan: no zoo directory");
  ZooManifest manifest =
      load_zoo_manifest((fs::path(plan.zoo_dir) / "zoo.json").string());
  Dataset train =
      load_dataset((fs::path(plan.zoo_dir) / manifest.train_data).string());

  auto report = [&](const std::string& line) {
    if (progress) progress(line);
  };

  // Resume: keep existing records whose provenance hash still matches.
  std::map<std::pair<std::string, std::string>, ordered_json> existing;
  if (fs::exists(out_path)) {
    ordered_json prior = load_json_file(out_path);
    if (prior.contains("records"))
      for (const auto& r : prior.at("records"))
        existing[{r.at("model").get<std::string>(), r.at("measure_request").get<std::string>()}] = r;
  }

  struct Task {
    size_t model_index;
    size_t measure_index;
  };
  std::vector<Task> tasks;
  std::map<std::pair<std::string, std::string>, ordered_json> records;
  int skipped = 0;
  for (size_t mi = 0; mi < manifest.records.size(); ++mi) {
    for (size_t qi = 0; qi < plan.measures.size(); ++qi) {
      const MeasureRequest& req = plan.measures[qi];
      const std::string& model_path = manifest.records[mi].model_path;
      std::string hash = provenance_hash(model_path, req, plan.seed, plan.budget);
      auto it = existing.find({model_path, req.id});
      if (it != existing.end() && it->second.at("hash").get<std::string>() == hash) {
        records[{model_path, req.id}] = it->second;
        ++skipped;
        continue;
      }
      tasks.push_back({mi, qi});
    }
  }
  if (skipped > 0)
    report("resuming: " + std::to_string(skipped) + " pairs already computed");

  std::mutex out_mutex;
  std::vector<ordered_json> failures;
  std::atomic<size_t> next{0};

  auto worker = [&]() {
    size_t loaded_model = SIZE_MAX;
    ModelSpec model;
    Dataset model_train;
    for (;;) {
      size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      const Task& task = tasks[t];
      const ZooRecord& rec = manifest.records[task.model_index];
      const MeasureRequest& req = plan.measures[task.measure_index];
      try {
        if (loaded_model != task.model_index) {
          model = load_model((fs::path(plan.zoo_dir) / rec.model_path).string());
          model_train = train;
          model_train.batch.labels = training_labels(train, rec);
          loaded_model = task.model_index;
        }
        uint64_t seed = rng_key(plan.seed, fnv64(req.id));
        MeasureValue value = compute_measure(model, model_train, req, seed, plan.budget);
        ordered_json record;
        record["model"] = rec.model_path;
        record["measure_request"] = req.id;
        ordered_json value_json = measure_value_to_json(value);
        record.update(value_json);
        record["hash"] = provenance_hash(rec.model_path, req, plan.seed, plan.budget);
        std::lock_guard<std::mutex> lock(out_mutex);
        records[{rec.model_path, req.id}] = std::move(record);
        report(rec.model_path + " " + req.id + " done");
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(out_mutex);
        ordered_json f;
        f["model"] = rec.model_path;
        f["measure_request"] = req.id;
        f["error"] = e.what();
        failures.push_back(std::move(f));
        report(rec.model_path + " " + req.id + " FAILED: " + e.what());
      }
    }
  };

  int threads = std::max(1, plan.parallelism);
  if (threads == 1 || tasks.size() <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::sort(failures.begin(), failures.end(), [](const ordered_json& a, const ordered_json& b) {
    auto ka = std::make_pair(a.at("model").get<std::string>(),
                             a.at("measure_request").get<std::string>());
    auto kb = std::make_pair(b.at("model").get<std::string>(),
                             b.at("measure_request").get<std::string>());
    return ka < kb;
  });

  ordered_json out;
  out["kind"] = "gapkit-results";
  out["version"] = 1;
  out["seed"] = plan.seed;
  out["budget"] = plan.budget;
  ordered_json record_array = ordered_json::array();
  for (const auto& [key, rec] : records) record_array.push_back(rec);
  out["records"] = record_array;
  out["failures"] = failures;
  std::string text = out.dump(2);
  text.push_back('\n');
  write_text_file(out_path, text);
  return int(failures.size());
}

void score_results(const std::string& results_path, const std::string& zoo_dir,
                   const std::string& out_path, const ScoreOptions& options) {
  ordered_json results = load_json_file(results_path);
  ZooManifest manifest = load_zoo_manifest((fs::path(zoo_dir) / "zoo.json").string());

  std::map<std::string, const ZooRecord*> by_path;
  std::vector<std::string> eligible;  // manifest order
  ordered_json skipped_models = ordered_json::array();
  for (const ZooRecord& r : manifest.records) {
    by_path[r.model_path] = &r;
    if (r.saturated || options.include_flagged) {
      eligible.push_back(r.model_path);
    } else {
      skipped_models.push_back(
          {{"model", r.model_path}, {"reason", r.diverged ? "diverged" : "unsaturated"}});
    }
  }

  // measure id -> model path -> oriented value
  std::map<std::string, std::map<std::string, double>> values;
  if (results.contains("records")) {
    for (const auto& r : results.at("records")) {
      std::string measure = r.at("measure_request").get<std::string>();
      std::string model = r.at("model").get<std::string>();
      double v = value_from_json(r.at("value"));
      if (!r.at("higher_means_larger_gap").get<bool>()) v = -v;
      values[measure][model] = v;
    }
  }

  ordered_json measures = ordered_json::array();
  ordered_json coverage_gaps = ordered_json::array();
  for (const auto& [measure, per_model] : values) {
    ScoreInput input;
    input.axis_names = manifest.axes;
    ordered_json scatter = ordered_json::array();
    std::vector<std::string> missing;
    for (const std::string& path : eligible) {
      auto it = per_model.find(path);
      if (it == per_model.end()) {
        missing.push_back(path);
        continue;
      }
      const ZooRecord* rec = by_path[path];
      ScoreRecord sr;
      sr.measure = it->second;
      sr.gap = rec->gap;
      for (const auto& [axis, value] : rec->config)
        sr.axis_values.push_back(ordered_json(value).dump());
      input.records.push_back(std::move(sr));
      scatter.push_back({it->second, rec->gap});
    }
    if (!missing.empty())
      coverage_gaps.push_back({{"measure", measure}, {"missing", missing}});

    ordered_json entry;
    entry["measure"] = measure;
    entry["models"] = input.records.size();
    if (input.records.size() < 2) {
      entry["kendall_tau"] = nullptr;
      entry["cmi_score"] = nullptr;
      entry["note"] = "fewer than 2 scored models";
    } else {
      try {
        entry["kendall_tau"] = kendall_tau(input);
      } catch (const Error&) {
        entry["kendall_tau"] = nullptr;
      }
      try {
        entry["cmi_score"] = conditional_mi_score(input, options.cmi);
      } catch (const Error&) {
        entry["cmi_score"] = nullptr;
      }
    }
    entry["scatter"] = scatter;
    measures.push_back(std::move(entry));
  }

  ordered_json out;
  out["kind"] = "gapkit-scores";
  out["version"] = 1;
  out["protocol"] = kCmiProtocol;
  out["cmi"] = {{"max_conditioning_size", options.cmi.max_conditioning_size},
                {"exact_size_only", options.cmi.exact_size_only},
                {"ties", options.cmi.ties == CmiTiePolicy::drop ? "drop" : "category"}};
  out["models_eligible"] = eligible.size();
  out["measures"] = measures;
  out["coverage_gaps"] = coverage_gaps;
  out["skipped_models"] = skipped_models;
  std::string text = out.dump(2);
  text.push_back('\n');
  write_text_file(out_path, text);
}

std::string render_report(const std::string& scores_path) {
  ordered_json scores = load_json_file(scores_path);
  std::string text;
  char line[256];
  std::snprintf(line, sizeof(line), "%-28s %8s %14s %12s\n", "measure", "models",
                "kendall_tau", "cmi_score");
  text += line;
  text += std::string(28 + 1 + 8 + 1 + 14 + 1 + 12, '-') + "\n";
  for (const auto& m : scores.at("measures")) {
    std::string tau = "n/a", cmi = "n/a";
    if (!m.at("kendall_tau").is_null()) {
      std::snprintf(line, sizeof(line), "%.4f", m.at("kendall_tau").get<double>());
      tau = line;
    }
    if (!m.at("cmi_score").is_null()) {
      std::snprintf(line, sizeof(line), "%.2f", m.at("cmi_score").get<double>());
      cmi = line;
    }
    std::snprintf(line, sizeof(line), "%-28s %8lld %14s %12s\n",
                  m.at("measure").get<std::string>().c_str(),
                  static_cast<long long>(m.at("models").get<int64_t>()), tau.c_str(),
                  cmi.c_str());
    text += line;
  }
  std::snprintf(line, sizeof(line), "protocol: %s, models eligible: %lld\n",
                scores.at("protocol").get<std::string>().c_str(),
                static_cast<long long>(scores.at("models_eligible").get<int64_t>()));
  text += line;
  return text;
}

}  // namespace gapkit
