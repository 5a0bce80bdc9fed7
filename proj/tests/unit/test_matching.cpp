#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "biasscope/propensity.hpp"
#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"

using namespace biasscope;

namespace {
std::vector<PropensityScore> scores(std::initializer_list<std::pair<const char*, double>> xs) {
  std::vector<PropensityScore> out;
  for (auto [id, e] : xs) out.push_back({id, e});
  return out;
}

std::vector<PropensityScore> random_scores(std::mt19937_64& rng, const std::string& prefix, int n, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  std::vector<PropensityScore> out;
  for (int i = 0; i < n; ++i) {
    const double x = ga(rng), y = gb(rng);
    out.push_back({prefix + std::to_string(i), x / (x + y)});
  }
  return out;
}
}  // namespace

TEST(Matching, NearestWithinCaliper) {
  const auto f = scores({{"f1", 0.90}, {"f2", 0.50}, {"f3", 0.10}});
  const auto m = scores({{"m1", 0.48}, {"m2", 0.85}, {"m3", 0.97}});
  MatchConfig cfg;
  cfg.caliper = 0.06;
  const auto r = greedy_match(f, m, cfg);
  ASSERT_EQ(r.pairs.size(), 2u);
  // hardest first: f3 (|0.4|) is discarded, then f1 takes the nearer of m2/m3
  EXPECT_EQ(r.discarded, (std::vector<std::string>{"f3"}));
  EXPECT_EQ(r.pairs[0].post_f, "f1");
  EXPECT_EQ(r.pairs[0].post_m, "m2");
  EXPECT_EQ(r.pairs[1].post_m, "m1");
  EXPECT_TRUE(oracle::check_matching(f, m, r).empty());
}

TEST(Matching, DistanceTiesGoToFirstListedPoolPost) {
  const auto f = scores({{"f1", 0.5}});
  const auto m = scores({{"m1", 0.6}, {"m2", 0.4}, {"m3", 0.6}});
  MatchConfig cfg;
  cfg.caliper = 0.2;
  const auto r = greedy_match(f, m, cfg);
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.pairs[0].post_m, "m1");
}

TEST(Matching, EmptyResultWarnsAndBadInputsThrow) {
  const auto f = scores({{"f1", 0.9}});
  const auto m = scores({{"m1", 0.1}});
  MatchConfig cfg;
  cfg.caliper = 0.01;
  EXPECT_TRUE(greedy_match(f, m, cfg).empty_warning);
  cfg.caliper = 0.0;
  EXPECT_THROW(greedy_match(f, m, cfg), ConfigError);
  cfg.caliper = 0.1;
  EXPECT_THROW(greedy_match(scores({{"f", 1.5}}), m, cfg), DataError);
}

TEST(Matching, AutoCaliperIsSdMultiple) {
  const auto all = scores({{"a", 0.1}, {"b", 0.3}, {"c", 0.5}, {"d", 0.7}});
  const double mean = 0.4;
  double var = 0;
  for (const auto& s : all) var += (s.e - mean) * (s.e - mean);
  var /= 3;
  EXPECT_NEAR(auto_caliper(all, 0.2), 0.2 * std::sqrt(var), 1e-15);
}

TEST(Matching, InvariantsOnRandomFixtures) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    const auto f = random_scores(rng, "f", 1 + trial * 7, 2.0, 1.0);
    const auto m = random_scores(rng, "m", 1 + trial * 9, 1.0, 2.0);
    for (auto order : {MatchOrder::HardestFirst, MatchOrder::InputOrder, MatchOrder::Random}) {
      MatchConfig cfg;
      cfg.order = order;
      cfg.seed = static_cast<std::uint64_t>(trial);
      const auto r = greedy_match(f, m, cfg);
      EXPECT_TRUE(oracle::check_matching(f, m, r).empty()) << trial;
    }
  }
}

TEST(Matching, WiderCaliperNeverMatchesFewer) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 30; ++trial) {
    const auto f = random_scores(rng, "f", 40, 2.0, 1.0);
    const auto m = random_scores(rng, "m", 60, 1.0, 2.0);
    std::size_t prev = 0;
    for (double c : {0.001, 0.005, 0.01, 0.03, 0.1, 0.3, 1.0}) {
      MatchConfig cfg;
      cfg.caliper = c;
      const auto r = greedy_match(f, m, cfg);
      EXPECT_GE(r.pairs.size(), prev) << "trial " << trial << " caliper " << c;
      prev = r.pairs.size();
    }
  }
}

TEST(Matching, SeededRunsAreIdentical) {
  std::mt19937_64 rng(31);
  const auto f = random_scores(rng, "f", 200, 2.0, 1.0);
  const auto m = random_scores(rng, "m", 300, 1.0, 2.0);
  MatchConfig cfg;
  cfg.order = MatchOrder::Random;
  cfg.seed = 5;
  std::ostringstream a, b;
  write_pairs(a, greedy_match(f, m, cfg).pairs);
  write_pairs(b, greedy_match(f, m, cfg).pairs);
  EXPECT_EQ(a.str(), b.str());
  std::istringstream in(a.str());
  const auto back = read_pairs(in);
  EXPECT_EQ(back.size(), greedy_match(f, m, cfg).pairs.size());
}

TEST(Balance, DownsamplesLargerSidePerPair) {
  std::mt19937_64 rng(37);
  const auto c = fixture::random_corpus(rng, 20, 5, 6);
  std::vector<PropensityScore> s;
  std::uniform_real_distribution<double> u(0.2, 0.8);
  for (const auto& p : c.posts()) s.push_back({p.id, u(rng)});
  const auto res = match_posts(c, s);
  const auto set = balance_comments(res.pairs, c, 3);
  EXPECT_EQ(set.f_comments, set.m_comments);
  EXPECT_TRUE(audit_matching(set, c, res.caliper).empty());
  EXPECT_LE(set.pairs.size(), res.pairs.size());
  const auto again = balance_comments(res.pairs, c, 3);
  EXPECT_EQ(again.comment_ids, set.comment_ids);
  const Corpus kept = set.apply_to(c);
  EXPECT_EQ(kept.comments().size(), set.comment_ids.size());
}

TEST(Balance, AuditCatchesViolations) {
  auto c = fixture::corpus({{"a", Gender::F, "pf", "x", "c1", "one two"},
                            {"b", Gender::M, "pm", "x", "c2", "one two"},
                            {"b", Gender::M, "pm", "x", "c3", "one two"}});
  MatchedTrainingSet bad;
  bad.pairs = {{"pf", "pm", 0.5}};
  bad.comment_ids = {"c1", "c2", "c3"};
  const auto problems = audit_matching(bad, c, 0.1);
  EXPECT_EQ(problems.size(), 3u);  // caliper, imbalance, unequal pair counts
}
