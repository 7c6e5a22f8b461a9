// gapkit CLI: build model zoos, run complexity measures over them, score
// measures against recorded generalization gaps, and render report tables.
// Links the gapkit shared library through its C API.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gapkit.h"

namespace {

using nlohmann::ordered_json;

void print_progress(const char* line, void*) { std::cout << line << "\n"; }

int exit_code_for(gk_status status) {
  switch (status) {
    case GK_OK:
      return 0;
    case GK_ERR_FORMAT:
    case GK_ERR_INVALID_ARGUMENT:
      return 2;
    default:
      return 1;
  }
}

int finish(gk_status status, const char* what) {
  if (status == GK_OK) return 0;
  std::cerr << what << ": " << gk_last_error() << "\n";
  return exit_code_for(status);
}

bool read_file(const std::string& path, std::string& out, std::string& error) {
  std::ifstream in(path);
  if (!in) {
    error = "cannot open " + path;
    return false;
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  out = buf.str();
  return true;
}

bool write_file(const std::string& path, const std::string& text, std::string& error) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    error = "cannot open " + path + " for writing";
    return false;
  }
  out << text;
  return true;
}

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(csv);
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gapkit — representation-quality measures that predict the "
               "generalization gap of trained CNNs"};
  app.require_subcommand(1);

  // zoo-build
  std::string zb_config, zb_out;
  int zb_parallel = 1;
  bool zb_force = false;
  CLI::App* zoo_build = app.add_subcommand("zoo-build",
                                           "train a hyperparameter grid of models");
  zoo_build->add_option("--config", zb_config, "zoo config file (json)")->required();
  zoo_build->add_option("--out", zb_out, "output zoo directory")->required();
  zoo_build->add_option("--parallel", zb_parallel, "concurrent training jobs");
  zoo_build->add_flag("--force", zb_force, "overwrite an existing zoo directory");

  // measure
  std::string m_zoo, m_config, m_out, m_measures;
  uint64_t m_seed = 0;
  bool m_seed_set = false;
  int64_t m_budget = -1;
  int m_parallel = 0;
  CLI::App* measure = app.add_subcommand("measure",
                                         "run complexity measures over a zoo");
  measure->add_option("--zoo", m_zoo, "zoo directory")->required();
  measure->add_option("--config", m_config, "run config file (json)");
  measure->add_option("--out", m_out, "results file")->required();
  measure->add_option("--measures", m_measures, "comma-separated measure ids");
  measure->add_option("--seed", m_seed, "measure seed")->each([&](const std::string&) {
    m_seed_set = true;
  });
  measure->add_option("--budget", m_budget, "sample budget (0 = default rule)");
  measure->add_option("--parallel", m_parallel, "concurrent models");

  // score
  std::string s_results, s_zoo, s_out, s_config;
  CLI::App* score = app.add_subcommand("score",
                                       "score measures against recorded gaps");
  score->add_option("results", s_results, "results file from `measure`")->required();
  score->add_option("--zoo", s_zoo, "zoo directory")->required();
  score->add_option("--out", s_out, "scores file")->required();
  score->add_option("--config", s_config, "scoring options file (json)");

  // report
  std::string r_scores, r_out;
  CLI::App* report = app.add_subcommand("report", "render the scores table");
  report->add_option("scores", r_scores, "scores file from `score`")->required();
  report->add_option("--out", r_out, "write the table here as well");

  CLI11_PARSE(app, argc, argv);
  std::string error;

  if (zoo_build->parsed()) {
    std::string config;
    if (!read_file(zb_config, config, error)) {
      std::cerr << error << "\n";
      return 2;
    }
    return finish(gk_zoo_build(config.c_str(), zb_out.c_str(), zb_parallel,
                               zb_force ? 1 : 0, print_progress, nullptr),
                  "zoo-build");
  }

  if (measure->parsed()) {
    ordered_json run = ordered_json::object();
    if (!m_config.empty()) {
      std::string text;
      if (!read_file(m_config, text, error)) {
        std::cerr << error << "\n";
        return 2;
      }
      try {
        run = ordered_json::parse(text);
      } catch (const std::exception& e) {
        std::cerr << m_config << ": " << e.what() << "\n";
        return 2;
      }
    }
    if (!m_measures.empty()) run["measures"] = split_csv(m_measures);
    if (m_seed_set) run["seed"] = m_seed;
    if (m_budget >= 0) run["budget"] = m_budget;
    if (m_parallel > 0) run["parallel"] = m_parallel;
    return finish(gk_measure_zoo(m_zoo.c_str(), run.dump().c_str(), m_out.c_str(),
                                 print_progress, nullptr),
                  "measure");
  }

  if (score->parsed()) {
    std::string options;
    if (!s_config.empty() && !read_file(s_config, options, error)) {
      std::cerr << error << "\n";
      return 2;
    }
    return finish(gk_score(s_results.c_str(), s_zoo.c_str(), s_out.c_str(),
                           options.empty() ? nullptr : options.c_str()),
                  "score");
  }

  if (report->parsed()) {
    char* text = nullptr;
    gk_status status = gk_report(r_scores.c_str(), &text);
    if (status != GK_OK) return finish(status, "report");
    std::cout << text;
    if (!r_out.empty() && !write_file(r_out, text, error)) {
      gk_string_free(text);
      std::cerr << error << "\n";
      return 1;
    }
    gk_string_free(text);
    return 0;
  }

  return 2;
}
