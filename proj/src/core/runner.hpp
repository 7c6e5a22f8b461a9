#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "core/io.hpp"
#include "core/measures.hpp"
#include "core/scoring.hpp"
#include "core/zoo.hpp"

namespace gapkit {

struct MeasureRequest {
  std::string id;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
};

struct RunPlan {
  std::string zoo_dir;
  std::vector<MeasureRequest> measures;
  uint64_t seed = 0;
  int64_t budget = 0;  // 0 = default budget rule
  int parallelism = 1;
};

const std::vector<std::string>& known_measure_ids();

// Dispatches one measure on one model. `train` must carry the labels the
// model was trained on. The seed is shared across models so every model is
// evaluated on the same vicinal distribution.
MeasureValue compute_measure(const ModelSpec& model, const Dataset& train,
                             const MeasureRequest& request, uint64_t seed,
                             int64_t budget);

nlohmann::ordered_json measure_value_to_json(const MeasureValue& value);

// Runs every (model, measure) pair of the plan over the zoo's saturated and
// flagged models alike, writing a deterministic results file. Pairs whose
// provenance hash already exists in the output file are skipped. Returns
// the number of failed pairs (also recorded in the file).
int run_measures(const RunPlan& plan, const std::string& out_path,
                 const ProgressFn& progress = {});

RunPlan run_plan_from_json(const nlohmann::ordered_json& j);

struct ScoreOptions {
  CmiConfig cmi;
  bool include_flagged = false;  // flagged models are excluded by default
};

// Scores every measure in the results file against the zoo's gaps and
// writes a machine-readable scores file (Kendall tau + CMI per measure).
void score_results(const std::string& results_path, const std::string& zoo_dir,
                   const std::string& out_path, const ScoreOptions& options = {});

// Renders the fixed-width report table from a scores file. Pure function of
// the file contents, so regeneration is byte-identical.
std::string render_report(const std::string& scores_path);

}  // namespace gapkit
