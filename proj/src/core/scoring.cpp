#include "core/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "core/error.hpp"

namespace gapkit {

void ScoreInput::validate() const {
  if (records.size() < 2)
    fail(ErrorCode::invalid_argument, "scoring needs at least 2 models");
  for (const ScoreRecord& r : records)
    if (r.axis_values.size() != axis_names.size())
      fail(ErrorCode::invalid_argument, "scoring record axis count mismatch");
}

double kendall_tau(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.size() < 2)
    fail(ErrorCode::invalid_argument, "kendall_tau needs at least 2 records");
  int64_t concordant = 0, discordant = 0;
  for (size_t a = 0; a < pairs.size(); ++a) {
    for (size_t b = a + 1; b < pairs.size(); ++b) {
      double dx = pairs[a].first - pairs[b].first;
      double dy = pairs[a].second - pairs[b].second;
      if (dx == 0.0 || dy == 0.0) continue;  // ties excluded
      if ((dx > 0) == (dy > 0))
        ++concordant;
      else
        ++discordant;
    }
  }
  int64_t total = concordant + discordant;
  if (total == 0)
    fail(ErrorCode::degenerate, "kendall_tau: every pair is tied");
  return double(concordant - discordant) / double(total);
}

double kendall_tau(const ScoreInput& input) {
  input.validate();
  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(input.records.size());
  for (const ScoreRecord& r : input.records) pairs.emplace_back(r.measure, r.gap);
  return kendall_tau(pairs);
}

namespace {

int sign3(double d) { return d > 0 ? 1 : d < 0 ? -1 : 0; }

// I(V_mu; V_g | cells) / H(V_g | cells) from per-cell pair sign counts.
struct CellCounts {
  // counts[v_mu + 1][v_g + 1]
  int64_t counts[3][3] = {};
  int64_t total = 0;
};

struct RatioResult {
  bool defined = false;
  double ratio = 0.0;
};

RatioResult mi_ratio(const std::vector<CellCounts>& cells) {
  int64_t all_pairs = 0;
  for (const CellCounts& c : cells) all_pairs += c.total;
  if (all_pairs == 0) return {};

  double mi = 0.0, h = 0.0;
  for (const CellCounts& c : cells) {
    if (c.total == 0) continue;
    const double weight = double(c.total) / double(all_pairs);
    double mu_marginal[3] = {}, g_marginal[3] = {};
    for (int u = 0; u < 3; ++u)
      for (int v = 0; v < 3; ++v) {
        mu_marginal[u] += double(c.counts[u][v]);
        g_marginal[v] += double(c.counts[u][v]);
      }
    double cell_mi = 0.0, cell_h = 0.0;
    for (int u = 0; u < 3; ++u) {
      for (int v = 0; v < 3; ++v) {
        if (c.counts[u][v] == 0) continue;
        double p = double(c.counts[u][v]) / double(c.total);
        double pu = mu_marginal[u] / double(c.total);
        double pv = g_marginal[v] / double(c.total);
        cell_mi += p * std::log(p / (pu * pv));
      }
    }
    for (int v = 0; v < 3; ++v) {
      if (g_marginal[v] == 0) continue;
      double pv = g_marginal[v] / double(c.total);
      cell_h -= pv * std::log(pv);
    }
    mi += weight * cell_mi;
    h += weight * cell_h;
  }
  if (h <= 0.0) return {};
  return {true, std::max(0.0, mi) / h};
}

void enumerate_subsets(int n, int size, std::vector<std::vector<int>>& out) {
  std::vector<int> cur;
  std::function<void(int)> rec = [&](int start) {
    if (int(cur.size()) == size) {
      out.push_back(cur);
      return;
    }
    for (int i = start; i < n; ++i) {
      cur.push_back(i);
      rec(i + 1);
      cur.pop_back();
    }
  };
  rec(0);
}

}  // namespace

double conditional_mi_score(const ScoreInput& input, const CmiConfig& cfg) {
  input.validate();
  if (cfg.max_conditioning_size < 0)
    fail(ErrorCode::invalid_argument, "cmi: negative conditioning size");
  const int n_axes = int(input.axis_names.size());
  const int max_size = std::min(cfg.max_conditioning_size, n_axes);

  std::vector<std::vector<int>> subsets;
  if (cfg.exact_size_only) {
    enumerate_subsets(n_axes, max_size, subsets);
  } else {
    for (int s = 0; s <= max_size; ++s) enumerate_subsets(n_axes, s, subsets);
  }

  bool any_defined = false;
  double best = 0.0;
  for (const std::vector<int>& subset : subsets) {
    std::map<std::vector<std::string>, std::vector<size_t>> cells;
    for (size_t r = 0; r < input.records.size(); ++r) {
      std::vector<std::string> key;
      key.reserve(subset.size());
      for (int axis : subset) key.push_back(input.records[r].axis_values[size_t(axis)]);
      cells[key].push_back(r);
    }
    std::vector<CellCounts> counts;
    counts.reserve(cells.size());
    for (const auto& [key, members] : cells) {
      CellCounts c;
      for (size_t a = 0; a < members.size(); ++a) {
        for (size_t b = a + 1; b < members.size(); ++b) {
          const ScoreRecord& ra = input.records[members[a]];
          const ScoreRecord& rb = input.records[members[b]];
          int vmu = sign3(ra.measure - rb.measure);
          int vg = sign3(ra.gap - rb.gap);
          if (cfg.ties == CmiTiePolicy::drop && (vmu == 0 || vg == 0)) continue;
          // unordered pairs have no canonical orientation: count both, so
          // the estimate cannot depend on record order
          ++c.counts[vmu + 1][vg + 1];
          ++c.counts[-vmu + 1][-vg + 1];
          c.total += 2;
        }
      }
      counts.push_back(c);
    }
    RatioResult r = mi_ratio(counts);
    if (!r.defined) continue;
    if (!any_defined || r.ratio < best) best = r.ratio;
    any_defined = true;
  }
  if (!any_defined)
    fail(ErrorCode::degenerate,
         "cmi: gap entropy is zero for every conditioning set (gaps constant)");
  return 100.0 * std::min(1.0, std::max(0.0, best));
}

}  // namespace gapkit
