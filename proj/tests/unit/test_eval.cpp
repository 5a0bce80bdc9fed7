#include <sstream>

#include <gtest/gtest.h>

#include "biasscope/evalharness.hpp"

using namespace biasscope;

TEST(Metrics, HandComputedConfusion) {
  // gold F F F M M M M ; predicted F M F F M M M -> tp 2 fn 1 fp 1 tn 3
  const std::vector<Gender> gold{Gender::F, Gender::F, Gender::F, Gender::M, Gender::M, Gender::M, Gender::M};
  const std::vector<Gender> pred{Gender::F, Gender::M, Gender::F, Gender::F, Gender::M, Gender::M, Gender::M};
  const auto r = evaluate(pred, gold);
  EXPECT_EQ(r.tp, 2u);
  EXPECT_EQ(r.fn, 1u);
  EXPECT_EQ(r.fp, 1u);
  EXPECT_EQ(r.tn, 3u);
  EXPECT_DOUBLE_EQ(r.precision, 2.0 / 3);
  EXPECT_DOUBLE_EQ(r.recall, 2.0 / 3);
  EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3);
  EXPECT_DOUBLE_EQ(r.accuracy, 5.0 / 7);

  const auto m = evaluate(pred, gold, Gender::M);
  EXPECT_EQ(m.positive_class, "M");
  EXPECT_DOUBLE_EQ(m.precision, 3.0 / 4);
  EXPECT_DOUBLE_EQ(m.recall, 3.0 / 4);
  EXPECT_DOUBLE_EQ(m.accuracy, r.accuracy);
}

TEST(Metrics, DegenerateRatiosAreFlagged) {
  const std::vector<Gender> gold{Gender::M, Gender::M};
  const std::vector<Gender> pred{Gender::M, Gender::M};
  const auto r = evaluate(pred, gold);
  EXPECT_TRUE(r.precision_undefined);
  EXPECT_TRUE(r.recall_undefined);
  EXPECT_DOUBLE_EQ(r.f1, 0.0);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_THROW(evaluate(std::vector<Gender>{Gender::M}, gold), DataError);
  EXPECT_THROW(evaluate(std::vector<Gender>{}, std::vector<Gender>{}), DataError);
}

TEST(Baselines, ClosedFormExpectations) {
  EXPECT_DOUBLE_EQ(expected_baseline_accuracy(BaselineKind::Uniform, 0.561), 0.5);
  EXPECT_NEAR(expected_baseline_accuracy(BaselineKind::ClassPrior, 0.561), 0.561 * 0.561 + 0.439 * 0.439, 1e-15);
  for (auto kind : {BaselineKind::Uniform, BaselineKind::ClassPrior}) {
    const auto r = random_baseline(kind, 0.561, 10000, 3);
    const double e = expected_baseline_accuracy(kind, 0.561);
    EXPECT_LE(std::abs(r.accuracy - e), binomial_half_width_95(e, 10000));
    EXPECT_EQ(r.support_positive, 5610u);
  }
  EXPECT_THROW(random_baseline(BaselineKind::Uniform, 1.5, 10, 1), ConfigError);
}

TEST(Transfer, ReadsTaggedPostsAndScoresWithModel) {
  std::istringstream in("post_id\ttag\ttext\nt1\tGender\tshe is beautiful\nt2\tpolitics\tbudget vote\nt3\tgender\t\n");
  SubstitutionLexicon lex;
  lex.add("she", "<they>");
  lex.add("he", "<they>");
  const auto posts = read_tagged_posts(in, &lex);
  ASSERT_EQ(posts.size(), 2u);
  EXPECT_EQ(posts[0].tag, PostTag::Gender);
  EXPECT_EQ(posts[0].tokens[0], "<they>");
  EXPECT_EQ(posts[1].tag, PostTag::Other);

  struct Keyword {
    struct P {
      double score;
      Gender label() const { return score > 0.5 ? Gender::F : Gender::M; }
    };
    P predict(std::span<const std::string> t) const {
      return {std::find(t.begin(), t.end(), "beautiful") != t.end() ? 0.9 : 0.1};
    }
  };
  const auto r = transfer_eval(Keyword{}, std::span<const TaggedPost>(posts));
  EXPECT_EQ(r.positive_class, "gender-tagged");
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);

  std::istringstream bad("t1 no tabs\n");
  EXPECT_THROW(read_tagged_posts(bad), DataError);
}

TEST(Report, TableHasOneRowPerModel) {
  const std::vector<NamedReport> rows{{"base", evaluate_binary(Flags{1, 0}, Flags{1, 1})},
                                      {"+demotion", evaluate_binary(Flags{1, 1}, Flags{1, 1})}};
  std::ostringstream out;
  write_report_table(out, rows, "Test");
  const auto s = out.str();
  EXPECT_NE(s.find("base"), std::string::npos);
  EXPECT_NE(s.find("100.0"), std::string::npos);
  EXPECT_NE(s.find("50.0"), std::string::npos);
}
