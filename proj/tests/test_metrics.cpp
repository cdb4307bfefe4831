#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "fairdistill/metrics.hpp"
#include "fairdistill/models.hpp"
#include "test_support.hpp"

namespace fairdistill {
namespace {

using fairdistill::testing::random_dense;

GroupIndex groups_of(const std::vector<int>& s) {
  std::vector<std::size_t> all(s.size());
  std::iota(all.begin(), all.end(), 0);
  return GroupIndex::from(s, all);
}

// Independent oracle: rates by scanning every node once per (class, group).
double oracle_sp(const std::vector<int>& pred, const std::vector<int>& s, int c) {
  double worst = 0.0;
  for (int k = 0; k < c; ++k) {
    double rate[2];
    for (int grp = 0; grp < 2; ++grp) {
      int members = 0, hits = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        if (s[i] != grp) continue;
        ++members;
        if (pred[i] == k) ++hits;
      }
      rate[grp] = static_cast<double>(hits) / members;
    }
    worst = std::max(worst, std::fabs(rate[0] - rate[1]));
  }
  return worst;
}

double oracle_eo(const std::vector<int>& pred, const std::vector<int>& y, const std::vector<int>& s, int c) {
  double worst = 0.0;
  for (int k = 0; k < c; ++k) {
    int members[2] = {0, 0}, hits[2] = {0, 0};
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (y[i] != k) continue;
      ++members[s[i]];
      if (pred[i] == k) ++hits[s[i]];
    }
    if (members[0] == 0 || members[1] == 0) continue;
    worst = std::max(worst, std::fabs(static_cast<double>(hits[0]) / members[0] -
                                      static_cast<double>(hits[1]) / members[1]));
  }
  return worst;
}

TEST(DeltaSp, HandExample) {
  const std::vector<int> pred = {1, 1, 0, 0, 1, 0, 0, 0};
  const std::vector<int> s = {0, 0, 0, 0, 1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(delta_sp(pred, groups_of(s), 2).aggregate, 0.25);
}

TEST(DeltaSp, EqualMultisetsGiveZero) {
  EXPECT_EQ(delta_sp({0, 1, 2, 2, 1, 0}, groups_of({0, 0, 0, 1, 1, 1}), 3).aggregate, 0.0);
}

TEST(DeltaSp, EmptyGroupIsAnError) {
  EXPECT_THROW(delta_sp({0, 1}, groups_of({1, 1}), 2), std::invalid_argument);
}

TEST(DeltaEo, PerfectClassifierIsFair) {
  const std::vector<int> y = {0, 1, 1, 0, 1, 0};
  EXPECT_EQ(delta_eo(y, y, groups_of({0, 0, 0, 1, 1, 1}), 2).aggregate, 0.0);
}

TEST(DeltaEo, HandExample) {
  // group0 positives predicted [1,1,0,1], group1 positives [1,0]
  const std::vector<int> y = {1, 1, 1, 1, 1, 1};
  const std::vector<int> pred = {1, 1, 0, 1, 1, 0};
  const std::vector<int> s = {0, 0, 0, 0, 1, 1};
  const BiasValue b = delta_eo(pred, y, groups_of(s), 2);
  EXPECT_DOUBLE_EQ(b.aggregate, 0.25);
  EXPECT_EQ(b.skipped_classes, std::vector<int>{0});
}

TEST(DeltaEo, SkipsClassMissingFromAGroup) {
  const std::vector<int> y = {0, 0, 1, 0, 0};
  const std::vector<int> pred = {0, 1, 1, 0, 0};
  const std::vector<int> s = {0, 0, 0, 1, 1};
  const BiasValue b = delta_eo(pred, y, groups_of(s), 2);
  EXPECT_EQ(b.skipped_classes, std::vector<int>{1});
  EXPECT_DOUBLE_EQ(b.aggregate, 0.5);
  EXPECT_THROW(delta_eo(pred, std::vector<int>{1, 1, 1, 0, 0}, groups_of(s), 2), std::invalid_argument);
}

TEST(HardMetrics, MatchOracleOnAllBinaryPatterns) {
  const std::vector<int> s = {0, 1, 0, 1, 1, 0, 0, 1};
  const std::vector<int> y = {1, 0, 0, 1, 1, 1, 0, 0};
  for (int mask = 0; mask < 256; ++mask) {
    std::vector<int> pred(8);
    for (int i = 0; i < 8; ++i) pred[static_cast<std::size_t>(i)] = (mask >> i) & 1;
    ASSERT_EQ(delta_sp(pred, groups_of(s), 2).aggregate, oracle_sp(pred, s, 2)) << mask;
    ASSERT_EQ(delta_eo(pred, y, groups_of(s), 2).aggregate, oracle_eo(pred, y, s, 2)) << mask;
  }
}

TEST(HardMetrics, MatchOracleOnRandomMulticlass) {
  std::mt19937_64 rng(2024);
  int checked_eo = 0;
  for (int t = 0; t < 1000; ++t) {
    const int n = std::uniform_int_distribution<int>(2, 50)(rng);
    const int c = std::uniform_int_distribution<int>(2, 4)(rng);
    std::uniform_int_distribution<int> cls(0, c - 1);
    std::vector<int> pred(static_cast<std::size_t>(n)), y(pred.size()), s(pred.size());
    for (auto& v : pred) v = cls(rng);
    for (auto& v : y) v = cls(rng);
    for (auto& v : s) v = static_cast<int>(rng() & 1);
    s[0] = 0;
    s[1] = 1;
    const GroupIndex g = groups_of(s);
    ASSERT_EQ(delta_sp(pred, g, static_cast<std::size_t>(c)).aggregate, oracle_sp(pred, s, c));
    try {
      const double eo = delta_eo(pred, y, g, static_cast<std::size_t>(c)).aggregate;
      ASSERT_EQ(eo, oracle_eo(pred, y, s, c));
      ++checked_eo;
    } catch (const std::invalid_argument&) {
      ASSERT_EQ(oracle_eo(pred, y, s, c), 0.0);
    }
  }
  EXPECT_GT(checked_eo, 900);
}

TEST(HardMetrics, BoundedPermutationAndSwapInvariant) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 30;
    std::vector<int> pred(n), y(n), s(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(rng() % 3);
      y[i] = static_cast<int>(rng() % 3);
      s[i] = i < 15 ? 0 : 1;
    }
    const double sp = delta_sp(pred, groups_of(s), 3).aggregate;
    const double eo = delta_eo(pred, y, groups_of(s), 3).aggregate;
    EXPECT_GE(sp, 0.0);
    EXPECT_LE(sp, 1.0);
    EXPECT_GE(eo, 0.0);
    EXPECT_LE(eo, 1.0);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> p2(n), y2(n), s2(n), flipped(n);
    for (std::size_t i = 0; i < n; ++i) {
      p2[i] = pred[perm[i]];
      y2[i] = y[perm[i]];
      s2[i] = s[perm[i]];
      flipped[i] = 1 - s[i];
    }
    EXPECT_DOUBLE_EQ(delta_sp(p2, groups_of(s2), 3).aggregate, sp);
    EXPECT_DOUBLE_EQ(delta_eo(p2, y2, groups_of(s2), 3).aggregate, eo);
    EXPECT_DOUBLE_EQ(delta_sp(pred, groups_of(flipped), 3).aggregate, sp);
    EXPECT_DOUBLE_EQ(delta_eo(pred, y, groups_of(flipped), 3).aggregate, eo);

    const DenseMat probs = row_softmax(random_dense(n, 3, rng, -2, 2));
    DenseMat permuted(n, 3);
    for (std::size_t i = 0; i < n; ++i)
      std::copy(probs.row(perm[i]).begin(), probs.row(perm[i]).end(), permuted.row(i).begin());
    EXPECT_NEAR(soft_bias_value(permuted, groups_of(s2), Notion::kSP),
                soft_bias_value(probs, groups_of(s), Notion::kSP), 1e-12);
    EXPECT_NEAR(soft_bias_value(probs, groups_of(flipped), Notion::kEO, &y),
                soft_bias_value(probs, groups_of(s), Notion::kEO, &y), 1e-12);
  }
}

TEST(SoftBias, IdenticalGroupMeansGiveZero) {
  const DenseMat p = DenseMat::from_rows({{0.2, 0.8}, {0.6, 0.4}, {0.6, 0.4}, {0.2, 0.8}});
  EXPECT_NEAR(soft_bias_value(p, groups_of({0, 0, 1, 1}), Notion::kSP), 0.0, 1e-15);
}

TEST(SoftBias, OneHotRowsSumHardGaps) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 40, c = 3;
    std::vector<int> pred(n), s(n), y(n);
    DenseMat p(n, c);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(rng() % c);
      y[i] = static_cast<int>(rng() % c);
      s[i] = static_cast<int>(i % 2);
      p(i, static_cast<std::size_t>(pred[i])) = 1.0;
    }
    const BiasValue hard = delta_sp(pred, groups_of(s), c);
    const double sum = std::accumulate(hard.per_class.begin(), hard.per_class.end(), 0.0);
    EXPECT_NEAR(soft_bias_value(p, groups_of(s), Notion::kSP), sum, 1e-12);
    try {
      const BiasValue eo = delta_eo(pred, y, groups_of(s), c);
      if (eo.skipped_classes.empty()) {
        const double eo_sum = std::accumulate(eo.per_class.begin(), eo.per_class.end(), 0.0);
        EXPECT_NEAR(soft_bias_value(p, groups_of(s), Notion::kEO, &y), eo_sum, 1e-12);
      }
    } catch (const std::invalid_argument&) {
    }
  }
}

TEST(SoftBias, BinaryOneHotEqualsTwiceDeltaSp) {
  const std::vector<int> pred = {1, 1, 0, 0, 1, 0, 0, 0};
  DenseMat p(8, 2);
  for (std::size_t i = 0; i < 8; ++i) p(i, static_cast<std::size_t>(pred[i])) = 1.0;
  const std::vector<int> s = {0, 0, 0, 0, 1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(soft_bias_value(p, groups_of(s), Notion::kSP), 2.0 * delta_sp(pred, groups_of(s), 2).aggregate);
}

// Each node's deviation from one-hot is sigmoid(-margin / T), so the gap to the
// hard value is bounded by the summed deviations over each group.
TEST(SoftBias, SharpenedSoftmaxApproachesHardGap) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal(0.0, 1.0);
  double total = 0.0;
  for (int t = 0; t < 50; ++t) {
    DenseMat logits(200, 2);
    for (double& v : logits.data()) v = normal(rng);
    std::vector<int> s(200);
    for (auto& v : s) v = static_cast<int>(rng() & 1);
    const GroupIndex g = groups_of(s);
    const std::vector<int> pred = predict_from_logits(logits).labels;
    double prev = 4.0;
    for (double temperature : {1.0, 0.1, 0.01, 0.001}) {
      DenseMat scaled = logits;
      for (double& v : scaled.data()) v /= temperature;
      const double err =
          std::fabs(soft_bias_value(row_softmax(scaled), g, Notion::kSP) - 2.0 * delta_sp(pred, g, 2).aggregate);
      double bound = 0.0;
      for (const auto* members : {&g.group0, &g.group1}) {
        for (std::size_t i : *members) {
          const double margin = std::fabs(logits(i, 0) - logits(i, 1)) / temperature;
          bound += 2.0 / (1.0 + std::exp(margin)) / static_cast<double>(members->size());
        }
      }
      EXPECT_LE(err, bound + 1e-12);
      EXPECT_LE(bound, prev);
      prev = bound;
      if (temperature == 0.01) total += err;
    }
  }
  EXPECT_LT(total / 50.0, 0.01);
}

TEST(SoftBias, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(17);
  const std::vector<int> s = {0, 1, 0, 1, 0, 1, 1, 0, 0, 1, 1, 0};
  const std::vector<int> y = {0, 0, 1, 1, 2, 2, 0, 1, 2, 1, 0, 2};
  for (Notion notion : {Notion::kSP, Notion::kEO}) {
    ad::ExprGraph g;
    const ad::Var z = g.input("Z");
    const ad::Var j = soft_bias(g, g.softmax(z), groups_of(s), notion, &y);
    ad::Bindings b;
    b.set("Z", random_dense(12, 3, rng, -2, 2));
    const auto report = ad::gradient_check(g, j, b);
    EXPECT_TRUE(report.passed) << to_string(notion) << " " << report.worst();
  }
}

TEST(SoftBias, EoNeedsLabelsInBothGroups) {
  const DenseMat p = DenseMat::from_rows({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}});
  const std::vector<int> y = {0, 1, 1};
  EXPECT_THROW(soft_bias_value(p, groups_of({0, 0, 1}), Notion::kEO, &y), std::invalid_argument);
  EXPECT_THROW(soft_bias_value(p, groups_of({0, 0, 1}), Notion::kEO), std::invalid_argument);
}

TEST(Notion, ParsesCaseInsensitively) {
  EXPECT_EQ(parse_notion("SP"), Notion::kSP);
  EXPECT_EQ(parse_notion("eo"), Notion::kEO);
  EXPECT_THROW(parse_notion("dp"), std::invalid_argument);
}

TEST(Reports, EvaluateReportsNanForUndefinedEo) {
  const DenseMat p = DenseMat::from_rows({{0.9, 0.1}, {0.2, 0.8}, {0.7, 0.3}, {0.4, 0.6}});
  const std::vector<int> y = {0, 1, 1, 1};
  const FairnessReport r = evaluate_fairness("m", {0, 1, 0, 1}, p, y, {0, 0, 1, 1}, {0, 1, 2, 3}, 4);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.75);
  EXPECT_DOUBLE_EQ(r.delta_sp, 0.0);
  EXPECT_DOUBLE_EQ(r.delta_eo, 0.5);
  EXPECT_TRUE(std::isnan(r.soft_eo));
  EXPECT_NEAR(r.soft_sp, 0.0, 1e-12);
}

TEST(Reports, CsvRoundTripIsByteStable) {
  std::vector<FairnessReport> rows = {
      {"teacher", 0.875, 0.1234567, 0.25, 0.5, 0.3333333, 0},
      {"reliant", 1.0, 0.0, std::numeric_limits<double>::quiet_NaN(), 0.1, 0.2, 42},
  };
  std::ostringstream first;
  write_reports_csv(first, rows);
  std::istringstream in(first.str());
  const auto back = read_reports_csv(in);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].model, "teacher");
  EXPECT_EQ(back[1].seed, 42u);
  EXPECT_TRUE(std::isnan(back[1].delta_eo));
  EXPECT_NEAR(back[0].delta_sp, 0.123457, 1e-12);
  std::ostringstream second;
  write_reports_csv(second, back);
  EXPECT_EQ(first.str(), second.str());
  EXPECT_EQ(first.str().substr(0, first.str().find('\n')), "model,accuracy,delta_sp,delta_eo,soft_sp,soft_eo,seed");
}

TEST(Reports, RejectsMalformedCsv) {
  std::istringstream bad_header("a,b\n");
  EXPECT_THROW(read_reports_csv(bad_header), std::invalid_argument);
  std::istringstream short_row("model,accuracy,delta_sp,delta_eo,soft_sp,soft_eo,seed\nx,1,2\n");
  EXPECT_THROW(read_reports_csv(short_row), std::invalid_argument);
}

}  // namespace
}  // namespace fairdistill
