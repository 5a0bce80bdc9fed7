#include <sstream>

#include <gtest/gtest.h>

#include "biasscope/corpus_io.hpp"
#include "biasscope/synthgen.hpp"

using namespace biasscope;

namespace {
SynthSpec small() {
  SynthSpec s;
  s.authors_per_gender = 3;
  s.posts_per_author = 4;
  s.comments_per_post = 5;
  return s;
}
}  // namespace

TEST(Synth, DeterministicForFixedSpec) {
  const auto a = generate(small());
  const auto b = generate(small());
  std::ostringstream ra, rb;
  a.write_rows(ra);
  b.write_rows(rb);
  EXPECT_EQ(ra.str(), rb.str());
  auto other = small();
  other.seed = 99;
  std::ostringstream rc;
  generate(other).write_rows(rc);
  EXPECT_NE(ra.str(), rc.str());
}

TEST(Synth, ShapeAndGroundTruthAgree) {
  auto spec = small();
  spec.confound_tokens = 2;
  const auto s = generate(spec);
  EXPECT_EQ(s.rows.size(), 6u * 4 * 5);
  ASSERT_EQ(s.truth.comments.size(), s.rows.size());
  EXPECT_EQ(s.truth.confound_tokens.size(), 6u);
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    const auto& t = s.truth.comments[i];
    const auto toks = tokenize(s.rows[i].comment_text);
    const auto has = [&](const std::string& w) { return std::find(toks.begin(), toks.end(), w) != toks.end(); };
    for (const auto& c : s.truth.confound_tokens.at(t.author_id)) EXPECT_EQ(has(c), t.confound);
    EXPECT_EQ(has(spec.bias_token), t.bias || t.echo);
    if (t.echo) EXPECT_TRUE(t.topic_post && t.gender == Gender::F);
    EXPECT_EQ(s.truth.post_has_topic.at(t.post_id), t.topic_post);
  }
}

TEST(Synth, RowsIngestToSameCorpus) {
  const auto s = generate(small());
  std::stringstream rows;
  s.write_rows(rows);
  const auto ingested = ingest_corpus(rows).corpus;
  const auto direct = to_corpus(s);
  ASSERT_EQ(ingested.comments().size(), direct.comments().size());
  for (std::size_t i = 0; i < direct.comments().size(); ++i)
    EXPECT_EQ(ingested.comments()[i].raw_tokens, direct.comments()[i].raw_tokens);
  EXPECT_EQ(ingested.author("f000").name_tokens, direct.author("f000").name_tokens);
}

TEST(Synth, SpecValidationAndJson) {
  auto bad = small();
  bad.confound_prob = 1.5;
  bad.posts_per_author = 0;
  try {
    bad.validate();
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("probabilities"), std::string::npos);
    EXPECT_NE(msg.find("posts_per_author"), std::string::npos);
  }
  const auto s = small();
  const auto back = synth_spec_from_json(to_json(s));
  EXPECT_EQ(to_json(back), to_json(s));
}

TEST(SynthTagged, RateAndMarkers) {
  SynthTaggedSpec spec;
  spec.n = 2000;
  const auto posts = generate_tagged(spec);
  std::size_t g = 0, marked_g = 0, marked_o = 0;
  for (const auto& p : posts) {
    const bool m = std::find(p.tokens.begin(), p.tokens.end(), spec.marker) != p.tokens.end();
    if (p.tag == PostTag::Gender) {
      ++g;
      marked_g += m;
    } else {
      marked_o += m;
    }
  }
  EXPECT_EQ(g, 1122u);
  EXPECT_GT(static_cast<double>(marked_g) / g, 0.6);
  EXPECT_LT(static_cast<double>(marked_o) / (2000 - g), 0.1);
}
