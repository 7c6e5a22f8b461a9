#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gapkit {

// One model's entry for scoring: measure value, generalization gap, and its
// hyperparameter point (axis values as canonical strings, manifest order).
struct ScoreRecord {
  double measure = 0.0;
  double gap = 0.0;
  std::vector<std::string> axis_values;
};

struct ScoreInput {
  std::vector<std::string> axis_names;
  std::vector<ScoreRecord> records;

  void validate() const;
};

// Kendall tau over all unordered model pairs; pairs tied in either variable
// are excluded from the denominator. Throws ErrorCode::degenerate when
// every pair is tied.
double kendall_tau(const std::vector<std::pair<double, double>>& pairs);
double kendall_tau(const ScoreInput& input);

enum class CmiTiePolicy { drop, category };

struct CmiConfig {
  int max_conditioning_size = 2;
  bool exact_size_only = false;     // condition on exactly max size instead of <=
  CmiTiePolicy ties = CmiTiePolicy::drop;
};

// Identifier recorded with every scored output; the protocol reconstructs
// the competition metric from its public description and is never presented
// as the official one.
inline constexpr const char* kCmiProtocol = "reconstructed-cmi-v1";

// For every conditioning set S of axes (|S| <= max, or == max when
// exact_size_only): partition models into cells sharing values on S, form
// all unordered pairs per cell, take the sign variables V_mu, V_g of the
// measure/gap differences, and estimate I(V_mu; V_g | S) and H(V_g | S)
// from pair-count-weighted cell empirical distributions (natural log).
// Returns 100 * min over S of I/H. Throws ErrorCode::degenerate when no
// conditioning set has positive gap entropy.
double conditional_mi_score(const ScoreInput& input, const CmiConfig& cfg = {});

}  // namespace gapkit
