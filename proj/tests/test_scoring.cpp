#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "core/error.hpp"
#include "core/scoring.hpp"
#include "oracles.hpp"

using namespace gapkit;

namespace {

ScoreInput make_input(const std::vector<double>& measures,
                      const std::vector<double>& gaps,
                      const std::vector<std::vector<int>>& axes,
                      int n_axes) {
  ScoreInput in;
  for (int a = 0; a < n_axes; ++a) in.axis_names.push_back("axis" + std::to_string(a));
  for (size_t i = 0; i < measures.size(); ++i) {
    ScoreRecord r;
    r.measure = measures[i];
    r.gap = gaps[i];
    for (int a = 0; a < n_axes; ++a)
      r.axis_values.push_back(std::to_string(axes[i][size_t(a)]));
    in.records.push_back(std::move(r));
  }
  return in;
}

}  // namespace

TEST_CASE("kendall tau closed cases") {
  std::vector<std::pair<double, double>> same = {{1, 1}, {2, 2}, {3, 3}, {4, 4}};
  CHECK(kendall_tau(same) == 1.0);

  std::vector<std::pair<double, double>> negated = {{1, 4}, {2, 3}, {3, 2}, {4, 1}};
  CHECK(kendall_tau(negated) == -1.0);

  // 4 records, one discordant pair out of 6: hand enumeration gives 4/6
  std::vector<std::pair<double, double>> one_swap = {{1, 1}, {2, 3}, {3, 2}, {4, 4}};
  int concordant = 0, discordant = 0;
  for (size_t a = 0; a < one_swap.size(); ++a)
    for (size_t b = a + 1; b < one_swap.size(); ++b) {
      double dx = one_swap[a].first - one_swap[b].first;
      double dy = one_swap[a].second - one_swap[b].second;
      ((dx > 0) == (dy > 0) ? concordant : discordant) += 1;
    }
  CHECK(concordant - discordant == 4);
  CHECK(kendall_tau(one_swap) == doctest::Approx(4.0 / 6.0));

  std::vector<std::pair<double, double>> tied = {{1, 1}, {1, 2}, {1, 3}};
  CHECK_THROWS_AS(kendall_tau(tied), Error);
}

TEST_CASE("cmi: measure identical to gap scores 100") {
  std::vector<double> mu = {0.1, 0.4, 0.2, 0.9, 0.6, 0.3};
  std::vector<std::vector<int>> axes = {{0}, {1}, {0}, {1}, {0}, {1}};
  ScoreInput in = make_input(mu, mu, axes, 1);
  CHECK(conditional_mi_score(in) == doctest::Approx(100.0));
}

TEST_CASE("cmi: independent coins score below 5 on ~1000 pairs") {
  std::mt19937 rng(911);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> mu, gap;
  std::vector<std::vector<int>> axes;
  for (int i = 0; i < 46; ++i) {  // 46 choose 2 = 1035 pairs
    mu.push_back(dist(rng));
    gap.push_back(dist(rng));
    axes.push_back({});
  }
  ScoreInput in = make_input(mu, gap, axes, 0);
  CHECK(conditional_mi_score(in) < 5.0);
}

TEST_CASE("cmi matches the exhaustive-enumeration oracle") {
  std::mt19937 rng(913);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int trial = 0; trial < 30; ++trial) {
    int n = 6 + trial % 5;  // up to 10 models
    int n_axes = 1 + trial % 3;  // up to 3 binary axes
    oracles::CmiOracleInput oin;
    std::vector<std::vector<int>> axes;
    for (int i = 0; i < n; ++i) {
      oin.measures.push_back(dist(rng));
      oin.gaps.push_back(dist(rng));
      std::vector<int> ax;
      for (int a = 0; a < n_axes; ++a) ax.push_back(coin(rng));
      oin.axes.push_back(ax);
      axes.push_back(ax);
    }
    ScoreInput in = make_input(oin.measures, oin.gaps, axes, n_axes);
    double want = oracles::cmi_oracle(oin, 2);
    if (want < 0) {
      CHECK_THROWS_AS(conditional_mi_score(in), Error);
    } else {
      CHECK(conditional_mi_score(in) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("cmi ratio does not depend on the log base") {
  std::mt19937 rng(917);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 1);
  oracles::CmiOracleInput oin;
  std::vector<std::vector<int>> axes;
  for (int i = 0; i < 9; ++i) {
    oin.measures.push_back(dist(rng));
    oin.gaps.push_back(dist(rng));
    oin.axes.push_back({coin(rng), coin(rng)});
    axes.push_back(oin.axes.back());
  }
  double nat = oracles::cmi_oracle(oin, 2, M_E);
  double base2 = oracles::cmi_oracle(oin, 2, 2.0);
  CHECK(nat == doctest::Approx(base2).epsilon(1e-12));
}

TEST_CASE("scores are invariant under strictly increasing transforms") {
  std::mt19937 rng(919);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 1);
  std::vector<double> mu, gap;
  std::vector<std::vector<int>> axes;
  for (int i = 0; i < 12; ++i) {
    mu.push_back(dist(rng) * 4 - 2);
    gap.push_back(dist(rng));
    axes.push_back({coin(rng), coin(rng)});
  }
  ScoreInput base = make_input(mu, gap, axes, 2);

  std::vector<double> expd = mu, affine = mu;
  for (double& v : expd) v = std::exp(v);
  for (double& v : affine) v = 3.0 * v + 7.0;
  ScoreInput t1 = make_input(expd, gap, axes, 2);
  ScoreInput t2 = make_input(affine, gap, axes, 2);

  CHECK(kendall_tau(base) == kendall_tau(t1));  // exact
  CHECK(kendall_tau(base) == kendall_tau(t2));
  CHECK(conditional_mi_score(base) == conditional_mi_score(t1));
  CHECK(conditional_mi_score(base) == conditional_mi_score(t2));
}

TEST_CASE("cmi is symmetric under axis relabeling and record permutation") {
  std::mt19937 rng(923);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 1);
  std::vector<double> mu, gap;
  std::vector<std::vector<int>> axes;
  for (int i = 0; i < 10; ++i) {
    mu.push_back(dist(rng));
    gap.push_back(dist(rng));
    axes.push_back({coin(rng), coin(rng)});
  }
  ScoreInput base = make_input(mu, gap, axes, 2);
  double score = conditional_mi_score(base);

  ScoreInput renamed = base;
  renamed.axis_names = {"zeta", "alpha"};
  CHECK(conditional_mi_score(renamed) == score);

  ScoreInput swapped = base;  // swap the two axis columns
  for (auto& r : swapped.records) std::swap(r.axis_values[0], r.axis_values[1]);
  CHECK(conditional_mi_score(swapped) == score);

  ScoreInput shuffled = base;
  std::shuffle(shuffled.records.begin(), shuffled.records.end(), rng);
  CHECK(conditional_mi_score(shuffled) == score);
}

TEST_CASE("score is monotone non-increasing in the conditioning size") {
  std::mt19937 rng(929);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> mu, gap;
    std::vector<std::vector<int>> axes;
    for (int i = 0; i < 14; ++i) {
      mu.push_back(dist(rng));
      gap.push_back(dist(rng) + 0.3 * mu.back());
      axes.push_back({coin(rng), coin(rng)});
    }
    ScoreInput in = make_input(mu, gap, axes, 2);
    CmiConfig cfg;
    cfg.max_conditioning_size = 0;
    double s0 = conditional_mi_score(in, cfg);
    cfg.max_conditioning_size = 1;
    double s1 = conditional_mi_score(in, cfg);
    cfg.max_conditioning_size = 2;
    double s2 = conditional_mi_score(in, cfg);
    CHECK(s0 >= s1 - 1e-12);
    CHECK(s1 >= s2 - 1e-12);
  }
}

TEST_CASE("constant gaps give the undefined-score error") {
  std::vector<double> mu = {0.1, 0.2, 0.3, 0.4};
  std::vector<double> gap = {0.5, 0.5, 0.5, 0.5};
  std::vector<std::vector<int>> axes = {{0}, {0}, {1}, {1}};
  ScoreInput in = make_input(mu, gap, axes, 1);
  CHECK_THROWS_AS(conditional_mi_score(in), Error);
}

TEST_CASE("exact-size and tie-category knobs are exposed") {
  std::mt19937 rng(931);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 1);
  std::vector<double> mu, gap;
  std::vector<std::vector<int>> axes;
  for (int i = 0; i < 12; ++i) {
    mu.push_back(dist(rng));
    gap.push_back(dist(rng));
    axes.push_back({coin(rng), coin(rng)});
  }
  ScoreInput in = make_input(mu, gap, axes, 2);

  CmiConfig exact;
  exact.max_conditioning_size = 2;
  exact.exact_size_only = true;
  double s_exact = conditional_mi_score(in, exact);
  CmiConfig upto;
  upto.max_conditioning_size = 2;
  double s_upto = conditional_mi_score(in, upto);
  CHECK(s_upto <= s_exact + 1e-12);  // min over a superset of conditioning sets

  // tie policy: with distinct values the category policy matches drop
  CmiConfig cat;
  cat.ties = CmiTiePolicy::category;
  CHECK(conditional_mi_score(in, cat) == conditional_mi_score(in));
}

TEST_CASE("score input validation") {
  ScoreInput in;
  in.axis_names = {"a"};
  CHECK_THROWS_AS(kendall_tau(in), Error);
  ScoreRecord r;
  r.measure = 1;
  r.gap = 1;
  r.axis_values = {"0", "1"};
  in.records.push_back(r);
  in.records.push_back(r);
  CHECK_THROWS_AS(kendall_tau(in), Error);  // axis arity mismatch
}
